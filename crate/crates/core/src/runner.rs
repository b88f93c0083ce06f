//! Spec-level orchestration shared by the command line and the C API: take a
//! validated config, run it, and leave the machine-readable artifacts in the
//! output directory. Pretty-printing stays with the caller.

use std::collections::HashSet;
use std::path::Path;

use crate::config::{Manifest, RunMode, SyntheticSpec, TrainSpec};
use crate::dataset;
use crate::error::{Error, Result};
use crate::ingest::{movielens, synthetic};
use crate::metrics::write_frames;
use crate::model::RankingModel;
use crate::trainer::{self, ProbePoint, RecurrentOutcome, StaticOutcome, SweepRow};
use crate::types::{DatasetMeta, InteractionEvent};

/// Parse a ratings CSV and write the canonical log plus metadata under `out`.
pub fn ingest_movielens(csv: &Path, out: &Path) -> Result<(Vec<InteractionEvent>, DatasetMeta)> {
    let events = movielens::parse_ratings_csv(csv)?;
    let users: HashSet<u64> = events.iter().map(|e| e.user_id).collect();
    let items: HashSet<u64> = events.iter().map(|e| e.item_id).collect();
    let meta = DatasetMeta {
        num_tasks: 1,
        day_boundaries: dataset::calendar_day_edges(&events),
        user_count: users.len() as u64,
        item_count: items.len() as u64,
    };
    meta.validate()?;
    std::fs::create_dir_all(out)?;
    dataset::save_events_binary(&events, &out.join("events.bin"))?;
    dataset::save_meta(&meta, &out.join("meta.json"))?;
    Ok((events, meta))
}

/// Generate a synthetic log (and optional probe tail) and write it under
/// `out`. Returns the log, its metadata, and the probe size when one was made.
pub fn ingest_synthetic(
    spec: &SyntheticSpec,
    out: &Path,
) -> Result<(Vec<InteractionEvent>, DatasetMeta, Option<usize>)> {
    spec.validate()?;
    let data = synthetic::generate(spec.generator.clone())?;
    let probe = match &spec.probe {
        None => None,
        Some(p) => {
            let mut g = synthetic::Generator::new(spec.generator.clone())?;
            for _ in 0..spec.generator.num_days {
                g.advance_day();
            }
            Some(g.generate_day(p.events, p.tag))
        }
    };
    std::fs::create_dir_all(out)?;
    dataset::save_events_binary(&data.events, &out.join("events.bin"))?;
    dataset::save_meta(&data.meta, &out.join("meta.json"))?;
    synthetic::write_truth(&data.truth, &out.join("truth.json"))?;
    let probe_len = match &probe {
        Some(events) => {
            dataset::save_events_binary(events, &out.join("probe.bin"))?;
            Some(events.len())
        }
        None => None,
    };
    Ok((data.events, data.meta, probe_len))
}

fn load_data(spec: &TrainSpec) -> Result<(Vec<InteractionEvent>, DatasetMeta)> {
    let events = dataset::load_events(&spec.data.events)?;
    let meta = dataset::load_meta(&spec.data.meta)?;
    if meta.num_tasks as usize != spec.model.num_tasks {
        return Err(Error::config(format!(
            "dataset has {} tasks, model.num_tasks is {}",
            meta.num_tasks, spec.model.num_tasks
        )));
    }
    Ok((events, meta))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("{}: serialize: {e}", path.display())))?;
    std::fs::write(path, json)?;
    Ok(())
}

fn run_recurrent_spec(spec: &TrainSpec, command: &str) -> Result<RecurrentOutcome> {
    let dir = &spec.output.dir;
    std::fs::create_dir_all(dir)?;
    Manifest::new(command, spec.clone()).write(&dir.join("manifest.json"))?;
    let (events, meta) = load_data(spec)?;
    let days = dataset::split_by_days(&events, &meta.day_boundaries)?;
    let model = RankingModel::new(spec.model.clone())?;
    let outcome = trainer::run_recurrent(
        model,
        &spec.schedule(),
        spec.run.strategy,
        spec.clustering.clone(),
        &days,
    )?;
    write_frames(&outcome.frames, &dir.join("frames.jsonl"))?;
    if spec.output.save_checkpoint {
        outcome.state.model.save(&dir.join("model.ckpt"))?;
        if let Some(map) = &outcome.state.clusters {
            map.write_text(&dir.join("clusters.txt"))?;
        }
    }
    Ok(outcome)
}

pub enum TrainSummary {
    Recurrent(RecurrentOutcome),
    Static(StaticOutcome),
}

/// Run a validated spec end to end: manifest, data, training, artifacts.
pub fn run_train_spec(spec: &TrainSpec) -> Result<TrainSummary> {
    spec.validate()?;
    match spec.mode {
        RunMode::Recurrent => Ok(TrainSummary::Recurrent(run_recurrent_spec(spec, "train")?)),
        RunMode::Static => {
            let dir = &spec.output.dir;
            std::fs::create_dir_all(dir)?;
            Manifest::new("train", spec.clone()).write(&dir.join("manifest.json"))?;
            let (events, _) = load_data(spec)?;
            let (outcome, model) =
                trainer::run_static(&events, &spec.model, spec.run.train_frac, spec.run.epochs)?;
            write_json(&outcome, &dir.join("outcome.json"))?;
            if spec.output.save_checkpoint {
                model.save(&dir.join("model.ckpt"))?;
            }
            Ok(TrainSummary::Static(outcome))
        }
    }
}

/// Run the sweep named by the spec's `[sweep]` section; one full recurrent
/// run per axis value, rows written to sweep.json.
pub fn run_sweep_spec(spec: &TrainSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep run needs a [sweep] section"))?;
    let dir = &spec.output.dir;
    std::fs::create_dir_all(dir)?;
    Manifest::new("sweep", spec.clone()).write(&dir.join("manifest.json"))?;
    let (events, meta) = load_data(spec)?;
    let days = dataset::split_by_days(&events, &meta.day_boundaries)?;
    let rows = trainer::run_sweep(
        &days,
        &spec.model,
        &spec.schedule(),
        spec.run.strategy,
        spec.clustering.as_ref(),
        &sweep.axis,
        sweep.baseline,
    )?;
    write_json(&rows, &dir.join("sweep.json"))?;
    Ok(rows)
}

/// Train per the spec, then score the frozen state over the future events
/// named by the `[drift]` section. Probe points land in drift.json.
pub fn run_drift_spec(spec: &TrainSpec) -> Result<(RecurrentOutcome, Vec<ProbePoint>)> {
    spec.validate()?;
    let drift = spec
        .drift
        .as_ref()
        .ok_or_else(|| Error::config("drift run needs a [drift] section"))?;
    let outcome = run_recurrent_spec(spec, "drift")?;
    let future = dataset::load_events(&drift.events)?;
    let points = trainer::run_drift_probe(&outcome.state, &future, drift.window_seconds)?;
    write_json(&points, &spec.output.dir.join("drift.json"))?;
    Ok((outcome, points))
}
