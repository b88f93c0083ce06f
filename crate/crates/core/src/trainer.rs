//! Training protocols over a day-partitioned log.
//!
//! The recurrent runner warm-starts one model across days: for each day it
//! folds the day's positives into the engagement index, scores the day's head
//! with frozen parameters (that eval belongs to the previous day's frame),
//! then trains over the full day in log order. Evaluation examples are never
//! trained on before being evaluated, and a rerun with the same seed emits
//! byte-identical frames.
//!
//! Also here: a static split benchmark for rating-style logs, a frozen-model
//! staleness probe over future windows, and single-axis sweeps that rerun the
//! recurrent protocol per value and report NCE relative to a baseline cell.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::movielens::temporal_split;
use crate::listbuilder::clusters::{ClusterMap, ClusteringConfig, CoEngagementAccumulator};
use crate::listbuilder::{
    build_ic_list, build_uc_clustered_list, build_uc_sampled_list, EngagementIndex,
};
use crate::metrics::{
    auc, engagement_quantile_edges, nce, segment_report, MetricsFrame, SegmentReport,
};
use crate::model::{Example, RankingModel};
use crate::types::{Formulation, InteractionEvent, ModelConfig, Pooling};

/// How engagement lists are built for each example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListStrategy {
    /// Item-centric: target user's engaged items, most recent first.
    IcSampling,
    /// User-centric: target item's engagers, reservoir-sampled per example.
    UcSampling,
    /// User-centric through the incremental cluster map.
    UcClustering,
    /// Both sides: recency item lists plus sampled user lists.
    Hybrid,
}

impl ListStrategy {
    pub fn formulation(self) -> Formulation {
        match self {
            ListStrategy::IcSampling => Formulation::ItemCentric,
            ListStrategy::UcSampling | ListStrategy::UcClustering => Formulation::UserCentric,
            ListStrategy::Hybrid => Formulation::Hybrid,
        }
    }

    pub fn for_formulation(f: Formulation) -> Self {
        match f {
            Formulation::ItemCentric => ListStrategy::IcSampling,
            Formulation::UserCentric => ListStrategy::UcSampling,
            Formulation::Hybrid => ListStrategy::Hybrid,
        }
    }
}

impl std::fmt::Display for ListStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ListStrategy::IcSampling => "ic-sampling",
            ListStrategy::UcSampling => "uc-sampling",
            ListStrategy::UcClustering => "uc-clustering",
            ListStrategy::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentSchedule {
    /// Examples of the next day scored per eval frame.
    pub eval_head_size: usize,
    /// Training passes over each day; 0 evaluates the initialized model.
    pub passes_per_day: usize,
    /// Continue parameters across days. Off means a fresh model every day.
    pub warm_start: bool,
}

impl Default for RecurrentSchedule {
    fn default() -> Self {
        RecurrentSchedule { eval_head_size: 10_000, passes_per_day: 1, warm_start: true }
    }
}

impl RecurrentSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.eval_head_size == 0 {
            return Err(Error::config("eval_head_size must be positive"));
        }
        Ok(())
    }
}

/// Everything a finished run needs to keep scoring: the model plus the
/// feature state (engagement index, cluster map) and the reservoir ordinal
/// counter it would have used next.
#[derive(Debug, Clone)]
pub struct TrainedState {
    pub model: RankingModel,
    pub index: EngagementIndex,
    pub clusters: Option<ClusterMap>,
    pub strategy: ListStrategy,
    next_ordinal: u64,
}

#[derive(Debug, Clone)]
pub struct RecurrentOutcome {
    pub frames: Vec<MetricsFrame>,
    pub state: TrainedState,
}

fn build_example(
    index: &EngagementIndex,
    clusters: Option<&ClusterMap>,
    strategy: ListStrategy,
    cap: usize,
    seed: u64,
    ordinal: u64,
    ev: &InteractionEvent,
) -> Example {
    let formulation = strategy.formulation();
    let k = index.num_tasks();
    let item_lists = if formulation.has_item_side() {
        (0..k).map(|e| build_ic_list(index, ev.user_id, e, ev.timestamp, cap)).collect()
    } else {
        Vec::new()
    };
    let user_lists = if formulation.has_user_side() {
        (0..k)
            .map(|e| match strategy {
                ListStrategy::UcClustering => build_uc_clustered_list(
                    index,
                    clusters.expect("cluster map exists for clustering strategy"),
                    ev.item_id,
                    e,
                    ev.timestamp,
                    cap,
                ),
                _ => build_uc_sampled_list(index, ev.item_id, e, ev.timestamp, cap, seed, ordinal),
            })
            .collect()
    } else {
        Vec::new()
    };
    Example {
        user_id: ev.user_id,
        item_id: ev.item_id,
        task: ev.engagement_type as usize,
        label: ev.label,
        item_lists,
        user_lists,
    }
}

struct HeadMetrics {
    examples: u64,
    nce: Vec<Option<f64>>,
    auc: Vec<Option<f64>>,
    positive_rate: f64,
    segments: SegmentReport,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_head(
    model: &mut RankingModel,
    index: &EngagementIndex,
    clusters: Option<&ClusterMap>,
    strategy: ListStrategy,
    next_ordinal: &mut u64,
    head: &[InteractionEvent],
    trained_user_counts: &HashMap<u64, u64>,
) -> Result<HeadMetrics> {
    let k = model.num_tasks();
    let cap = model.config().list_capacity;
    let seed = model.config().rng_seed;
    let mut preds = Vec::with_capacity(head.len());
    let mut labels = Vec::with_capacity(head.len());
    let mut counts = Vec::with_capacity(head.len());
    let mut by_task: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, ev) in head.iter().enumerate() {
        let ex = build_example(index, clusters, strategy, cap, seed, *next_ordinal, ev);
        *next_ordinal += 1;
        preds.push(model.predict(&ex)?);
        labels.push(ev.label);
        counts.push(trained_user_counts.get(&ev.user_id).copied().unwrap_or(0));
        by_task[ev.engagement_type as usize].push(i);
    }
    let mut nce_by_task = Vec::with_capacity(k);
    let mut auc_by_task = Vec::with_capacity(k);
    for idxs in &by_task {
        let p: Vec<f64> = idxs.iter().map(|&i| preds[i]).collect();
        let y: Vec<u8> = idxs.iter().map(|&i| labels[i]).collect();
        nce_by_task.push(nce(&p, &y).ok());
        auc_by_task.push(auc(&p, &y).ok());
    }
    let positive_rate =
        labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64;
    // Bucket edges come from the count distribution over trained users, one
    // sample per user; eval-only users land in the least-active bucket.
    let count_population: Vec<u64> = trained_user_counts.values().copied().collect();
    let edges = engagement_quantile_edges(&count_population);
    let segments = segment_report(&counts, &labels, &preds, None, &edges)?;
    Ok(HeadMetrics {
        examples: head.len() as u64,
        nce: nce_by_task,
        auc: auc_by_task,
        positive_rate,
        segments,
    })
}

/// Recurrent day-by-day protocol. Emits one frame per day carrying the growth
/// reports after that day's training; a frame's eval fields are filled in
/// when the next day's head is scored (so the final day's stay absent).
pub fn run_recurrent(
    mut model: RankingModel,
    schedule: &RecurrentSchedule,
    strategy: ListStrategy,
    clustering: Option<ClusteringConfig>,
    days: &[&[InteractionEvent]],
) -> Result<RecurrentOutcome> {
    schedule.validate()?;
    if strategy.formulation() != model.config().formulation {
        return Err(Error::config(format!(
            "strategy {strategy} needs formulation {}, model has {}",
            strategy.formulation(),
            model.config().formulation
        )));
    }
    let (mut accumulator, mut clusters) = if strategy == ListStrategy::UcClustering {
        let cfg = clustering
            .ok_or_else(|| Error::config("uc-clustering strategy needs a clustering config"))?;
        (Some(CoEngagementAccumulator::new(&cfg)), Some(ClusterMap::new(cfg)?))
    } else {
        (None, None)
    };
    let k = model.num_tasks();
    let cap = model.config().list_capacity;
    let seed = model.config().rng_seed;
    let mut index = EngagementIndex::new(k);
    let mut next_ordinal: u64 = 0;
    let mut frames: Vec<MetricsFrame> = Vec::with_capacity(days.len());

    for (t, day) in days.iter().enumerate() {
        // Snapshot of per-user activity over trained days only; this day is
        // eval-period data for the pending frame, not training period.
        let trained_counts = (t > 0).then(|| index.user_counts().clone());
        for ev in *day {
            if (ev.engagement_type as usize) >= k {
                return Err(Error::config(format!(
                    "engagement_type {} outside {k} tasks",
                    ev.engagement_type
                )));
            }
            index.record(ev);
        }
        if let Some(trained_counts) = trained_counts {
            let head = &day[..day.len().min(schedule.eval_head_size)];
            if !head.is_empty() {
                let m = evaluate_head(
                    &mut model,
                    &index,
                    clusters.as_ref(),
                    strategy,
                    &mut next_ordinal,
                    head,
                    &trained_counts,
                )?;
                let frame = frames.last_mut().expect("previous day emitted a frame");
                frame.eval_day = Some(t as u32 + 1);
                frame.eval_examples = m.examples;
                frame.nce = m.nce;
                frame.auc = m.auc;
                frame.positive_rate = Some(m.positive_rate);
                frame.segments = Some(m.segments);
            }
        }
        if !schedule.warm_start && t > 0 {
            model = RankingModel::new(model.config().clone())?;
        }
        for _ in 0..schedule.passes_per_day {
            for ev in *day {
                let ex =
                    build_example(&index, clusters.as_ref(), strategy, cap, seed, next_ordinal, ev);
                next_ordinal += 1;
                model.train_step(&ex)?;
            }
        }
        if let (Some(acc), Some(map)) = (accumulator.as_mut(), clusters.as_mut()) {
            acc.absorb_day(day);
            let graph = acc.graph(map.config().min_edge_weight);
            map.update(&graph)?;
        }
        let (item_growth, user_growth) = model.growth_reports();
        frames.push(MetricsFrame {
            day: t as u32 + 1,
            eval_day: None,
            eval_examples: 0,
            nce: vec![None; k],
            auc: vec![None; k],
            positive_rate: None,
            item_growth,
            user_growth,
            segments: None,
        });
    }
    Ok(RecurrentOutcome {
        frames,
        state: TrainedState { model, index, clusters, strategy, next_ordinal },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticOutcome {
    pub train_examples: u64,
    pub test_examples: u64,
    /// Per-task values over the test split; None for degenerate labels.
    pub nce: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    pub positive_rate: Option<f64>,
}

/// Static benchmark over a rating-style log: per-user temporal split, the
/// configured number of passes over the training half in log order, then one
/// frozen scoring pass over the test half. Test-time lists come from the
/// training split only, so the feature state is identical for every test
/// example regardless of test ordering. Returns the metrics and the trained
/// model (for checkpointing).
pub fn run_static(
    events: &[InteractionEvent],
    model_config: &ModelConfig,
    train_frac: f64,
    epochs: usize,
) -> Result<(StaticOutcome, RankingModel)> {
    let strategy = ListStrategy::for_formulation(model_config.formulation);
    let mut model = RankingModel::new(model_config.clone())?;
    let k = model.num_tasks();
    let cap = model_config.list_capacity;
    let seed = model_config.rng_seed;
    let split = temporal_split(events, train_frac)?;
    let mut index = EngagementIndex::new(k);
    for ev in &split.train {
        if (ev.engagement_type as usize) >= k {
            return Err(Error::config(format!(
                "engagement_type {} outside {k} tasks",
                ev.engagement_type
            )));
        }
        index.record(ev);
    }
    let mut next_ordinal: u64 = 0;
    for _ in 0..epochs {
        for ev in &split.train {
            let ex = build_example(&index, None, strategy, cap, seed, next_ordinal, ev);
            next_ordinal += 1;
            model.train_step(&ex)?;
        }
    }
    let mut preds = Vec::with_capacity(split.test.len());
    let mut labels = Vec::with_capacity(split.test.len());
    let mut by_task: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, ev) in split.test.iter().enumerate() {
        if (ev.engagement_type as usize) >= k {
            return Err(Error::config(format!(
                "engagement_type {} outside {k} tasks",
                ev.engagement_type
            )));
        }
        let ex = build_example(&index, None, strategy, cap, seed, next_ordinal, ev);
        next_ordinal += 1;
        preds.push(model.predict(&ex)?);
        labels.push(ev.label);
        by_task[ev.engagement_type as usize].push(i);
    }
    let mut nce_by_task = Vec::with_capacity(k);
    let mut auc_by_task = Vec::with_capacity(k);
    for idxs in &by_task {
        let p: Vec<f64> = idxs.iter().map(|&i| preds[i]).collect();
        let y: Vec<u8> = idxs.iter().map(|&i| labels[i]).collect();
        nce_by_task.push(nce(&p, &y).ok());
        auc_by_task.push(auc(&p, &y).ok());
    }
    let positive_rate = (!labels.is_empty())
        .then(|| labels.iter().filter(|&&y| y == 1).count() as f64 / labels.len() as f64);
    let outcome = StaticOutcome {
        train_examples: split.train.len() as u64,
        test_examples: split.test.len() as u64,
        nce: nce_by_task,
        auc: auc_by_task,
        positive_rate,
    };
    Ok((outcome, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub window: u32,
    pub start: i64,
    pub examples: u64,
    /// None when the window is empty or its labels are degenerate.
    pub nce: Option<f64>,
}

/// Scores future events with frozen parameters, one NCE per consecutive
/// time window. The feature state advances as events arrive (a fresh copy of
/// the index absorbs each event after scoring it), so the curve isolates
/// parameter staleness from feature staleness. The cluster map, being model
/// state, stays frozen.
pub fn run_drift_probe(
    state: &TrainedState,
    future: &[InteractionEvent],
    window_seconds: i64,
) -> Result<Vec<ProbePoint>> {
    if window_seconds <= 0 {
        return Err(Error::config("window_seconds must be positive"));
    }
    if future.is_empty() {
        return Ok(Vec::new());
    }
    if !future.windows(2).all(|w| w[0].timestamp <= w[1].timestamp) {
        return Err(Error::config("probe events must be time-ordered"));
    }
    let mut model = state.model.clone();
    let mut index = state.index.clone();
    let clusters = state.clusters.as_ref();
    let k = model.num_tasks();
    let cap = model.config().list_capacity;
    let seed = model.config().rng_seed;
    let mut next_ordinal = state.next_ordinal;
    let t0 = future[0].timestamp.div_euclid(window_seconds) * window_seconds;
    let nwin = ((future.last().unwrap().timestamp - t0) / window_seconds) as usize + 1;
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); nwin];
    let mut labels: Vec<Vec<u8>> = vec![Vec::new(); nwin];
    for ev in future {
        if (ev.engagement_type as usize) >= k {
            return Err(Error::config(format!(
                "engagement_type {} outside {k} tasks",
                ev.engagement_type
            )));
        }
        let w = ((ev.timestamp - t0) / window_seconds) as usize;
        let ex = build_example(&index, clusters, state.strategy, cap, seed, next_ordinal, ev);
        next_ordinal += 1;
        preds[w].push(model.predict(&ex)?);
        labels[w].push(ev.label);
        index.record(ev);
    }
    Ok((0..nwin)
        .map(|w| ProbePoint {
            window: w as u32,
            start: t0 + w as i64 * window_seconds,
            examples: preds[w].len() as u64,
            nce: nce(&preds[w], &labels[w]).ok(),
        })
        .collect())
}

/// One axis varied per sweep; every other knob is shared, seed included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "axis", content = "values")]
pub enum SweepAxis {
    HashSize(Vec<usize>),
    EmbedDim(Vec<usize>),
    Strategy(Vec<ListStrategy>),
    Pooling(Vec<Pooling>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            SweepAxis::HashSize(v) => v.len(),
            SweepAxis::EmbedDim(v) => v.len(),
            SweepAxis::Strategy(v) => v.len(),
            SweepAxis::Pooling(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, i: usize) -> String {
        match self {
            SweepAxis::HashSize(v) => format!("hash={}", v[i]),
            SweepAxis::EmbedDim(v) => format!("dim={}", v[i]),
            SweepAxis::Strategy(v) => v[i].to_string(),
            SweepAxis::Pooling(v) => v[i].to_string(),
        }
    }

    fn apply(&self, i: usize, config: &mut ModelConfig, strategy: &mut ListStrategy) {
        match self {
            SweepAxis::HashSize(v) => config.hash_size = v[i],
            SweepAxis::EmbedDim(v) => config.embed_dim = v[i],
            SweepAxis::Strategy(v) => {
                *strategy = v[i];
                config.formulation = v[i].formulation();
            }
            SweepAxis::Pooling(v) => config.pooling = v[i],
        }
    }
}

/// Frames averaged from the end of each run when summarizing a sweep cell;
/// the final frames are past the early transient.
pub const SWEEP_TAIL_FRAMES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub mean_nce: Option<f64>,
    /// Percent change of NCE versus the baseline row; negative is better.
    pub relative_pct: Option<f64>,
}

fn tail_mean_nce(frames: &[MetricsFrame], tail: usize) -> Option<f64> {
    let vals: Vec<f64> = frames.iter().filter_map(|f| f.mean_nce()).collect();
    if vals.is_empty() {
        return None;
    }
    let start = vals.len().saturating_sub(tail);
    let t = &vals[start..];
    Some(t.iter().sum::<f64>() / t.len() as f64)
}

/// One full recurrent run per axis value, reported as NCE relative to the
/// baseline cell (0 for the baseline itself).
pub fn run_sweep(
    days: &[&[InteractionEvent]],
    base_model: &ModelConfig,
    schedule: &RecurrentSchedule,
    base_strategy: ListStrategy,
    clustering: Option<&ClusteringConfig>,
    axis: &SweepAxis,
    baseline: usize,
) -> Result<Vec<SweepRow>> {
    if axis.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    if baseline >= axis.len() {
        return Err(Error::config(format!(
            "baseline index {baseline} out of range for {} values",
            axis.len()
        )));
    }
    let mut rows = Vec::with_capacity(axis.len());
    for i in 0..axis.len() {
        let mut config = base_model.clone();
        let mut strategy = base_strategy;
        axis.apply(i, &mut config, &mut strategy);
        let model = RankingModel::new(config)?;
        let outcome = run_recurrent(model, schedule, strategy, clustering.cloned(), days)?;
        rows.push(SweepRow {
            label: axis.label(i),
            mean_nce: tail_mean_nce(&outcome.frames, SWEEP_TAIL_FRAMES),
            relative_pct: None,
        });
    }
    let base_val = rows[baseline].mean_nce;
    for (i, row) in rows.iter_mut().enumerate() {
        row.relative_pct = match (base_val, row.mean_nce) {
            _ if i == baseline => base_val.map(|_| 0.0),
            (Some(b), Some(v)) => Some((v - b) / b * 100.0),
            _ => None,
        };
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split_by_days;
    use crate::ingest::synthetic::{generate, Generator, SyntheticConfig};
    use crate::types::SECONDS_PER_DAY;

    fn synth_config(days: u32) -> SyntheticConfig {
        SyntheticConfig {
            num_users: 60,
            items_per_day: 8,
            item_lifespan_days: 4,
            events_per_day: 300,
            num_days: days,
            activity_multipliers: vec![1.0],
            ..SyntheticConfig::default()
        }
    }

    fn model_config(strategy: ListStrategy) -> ModelConfig {
        ModelConfig {
            formulation: strategy.formulation(),
            embed_dim: 8,
            hash_size: 512,
            list_capacity: 32,
            interaction_hidden_dims: vec![8],
            ..ModelConfig::default()
        }
    }

    fn run(
        strategy: ListStrategy,
        schedule: &RecurrentSchedule,
        days: u32,
    ) -> RecurrentOutcome {
        let data = generate(synth_config(days)).unwrap();
        let slices = split_by_days(&data.events, &data.meta.day_boundaries).unwrap();
        let model = RankingModel::new(model_config(strategy)).unwrap();
        let clustering = (strategy == ListStrategy::UcClustering)
            .then(|| ClusteringConfig { min_edge_weight: 1.0, ..ClusteringConfig::default() });
        run_recurrent(model, schedule, strategy, clustering, &slices).unwrap()
    }

    #[test]
    fn zero_passes_reflect_initialization_only() {
        let schedule = RecurrentSchedule { passes_per_day: 0, ..RecurrentSchedule::default() };
        let out = run(ListStrategy::IcSampling, &schedule, 2);
        assert_eq!(out.frames.len(), 2);
        let f = &out.frames[0];
        assert_eq!(f.day, 1);
        assert_eq!(f.eval_day, Some(2));
        assert_eq!(f.eval_examples, 300);
        assert!(f.nce[0].is_some());
        assert!(f.auc[0].is_some());
        // Nothing trained, so the tables never saw an ID.
        assert_eq!(f.item_growth.unwrap().distinct_raw_ids, 0);
        assert!(f.user_growth.is_none(), "item-centric run has no user table");
        // The last day has no next-day head to score.
        assert_eq!(out.frames[1].eval_day, None);
    }

    #[test]
    fn reruns_emit_identical_frames_including_clustering() {
        for strategy in [ListStrategy::UcClustering, ListStrategy::Hybrid] {
            let schedule = RecurrentSchedule::default();
            let a = run(strategy, &schedule, 4);
            let b = run(strategy, &schedule, 4);
            assert_eq!(a.frames, b.frames);
            if strategy == ListStrategy::UcClustering {
                assert_eq!(
                    a.state.clusters.as_ref().unwrap().assignment(),
                    b.state.clusters.as_ref().unwrap().assignment()
                );
                assert!(!a.state.clusters.as_ref().unwrap().is_empty());
            }
        }
    }

    #[test]
    fn eval_scores_only_the_head_of_the_next_day() {
        let data = generate(synth_config(2)).unwrap();
        let slices = split_by_days(&data.events, &data.meta.day_boundaries).unwrap();
        let schedule = RecurrentSchedule { eval_head_size: 50, ..RecurrentSchedule::default() };

        // Perturb day 2 strictly past the head: frame 1's eval can't change.
        let mut tampered = data.events.clone();
        let day2_start = slices[0].len();
        for ev in &mut tampered[day2_start + 50..] {
            ev.label ^= 1;
        }
        let tampered_slices = split_by_days(&tampered, &data.meta.day_boundaries).unwrap();

        let model = || RankingModel::new(model_config(ListStrategy::IcSampling)).unwrap();
        let a =
            run_recurrent(model(), &schedule, ListStrategy::IcSampling, None, &slices).unwrap();
        let b = run_recurrent(model(), &schedule, ListStrategy::IcSampling, None, &tampered_slices)
            .unwrap();
        assert_eq!(a.frames[0].eval_examples, 50);
        assert_eq!(a.frames[0].nce, b.frames[0].nce);
        assert_eq!(a.frames[0].auc, b.frames[0].auc);
        assert_eq!(a.frames[0].positive_rate, b.frames[0].positive_rate);
    }

    #[test]
    fn growth_tracks_the_embedded_side() {
        let schedule = RecurrentSchedule::default();
        let ic = run(ListStrategy::IcSampling, &schedule, 6);
        let items: Vec<u64> =
            ic.frames.iter().map(|f| f.item_growth.unwrap().distinct_raw_ids).collect();
        assert!(items.windows(2).all(|w| w[1] > w[0]), "fresh cohorts keep arriving: {items:?}");

        let uc = run(ListStrategy::UcSampling, &schedule, 6);
        let users: Vec<u64> =
            uc.frames.iter().map(|f| f.user_growth.unwrap().distinct_raw_ids).collect();
        assert_eq!(*users.last().unwrap(), 60, "whole population engaged");
        assert!(users.windows(2).all(|w| w[1] >= w[0]));
        assert!(uc.frames.iter().all(|f| f.item_growth.is_none()));
    }

    #[test]
    fn strategy_and_model_formulation_must_agree() {
        let model = RankingModel::new(model_config(ListStrategy::IcSampling)).unwrap();
        let err = run_recurrent(
            model,
            &RecurrentSchedule::default(),
            ListStrategy::UcSampling,
            None,
            &[],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));

        let model = RankingModel::new(model_config(ListStrategy::UcClustering)).unwrap();
        let err =
            run_recurrent(model, &RecurrentSchedule::default(), ListStrategy::UcClustering, None, &[])
                .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn static_split_run_scores_the_test_half() {
        let data = generate(synth_config(3)).unwrap();
        let cfg = model_config(ListStrategy::Hybrid);
        let (out, _) = run_static(&data.events, &cfg, 0.8, 1).unwrap();
        assert!(out.train_examples > 0 && out.test_examples > 0);
        assert_eq!(out.train_examples + out.test_examples, 900);
        assert!(out.auc[0].unwrap() > 0.0 && out.auc[0].unwrap() < 1.0);
        assert!(out.nce[0].unwrap() > 0.0);
        let (again, _) = run_static(&data.events, &cfg, 0.8, 1).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn drift_probe_windows_partition_the_future() {
        let schedule = RecurrentSchedule::default();
        let out = run(ListStrategy::UcSampling, &schedule, 3);
        let mut g = Generator::new(synth_config(3)).unwrap();
        for _ in 0..3 {
            g.advance_day();
        }
        let future = g.generate_day(600, 1);
        let window = SECONDS_PER_DAY / 4;
        let points = run_drift_probe(&out.state, &future, window).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points.iter().map(|p| p.examples).sum::<u64>(), 600);
        assert!(points.iter().all(|p| p.nce.is_some()));
        assert!(points.windows(2).all(|w| w[1].start - w[0].start == window));
        assert_eq!(points, run_drift_probe(&out.state, &future, window).unwrap());
        assert!(run_drift_probe(&out.state, &future, 0).is_err());
    }

    #[test]
    fn single_value_sweep_is_its_own_baseline() {
        let data = generate(synth_config(3)).unwrap();
        let slices = split_by_days(&data.events, &data.meta.day_boundaries).unwrap();
        let rows = run_sweep(
            &slices,
            &model_config(ListStrategy::UcSampling),
            &RecurrentSchedule::default(),
            ListStrategy::UcSampling,
            None,
            &SweepAxis::HashSize(vec![512]),
            0,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].label, "hash=512");
        assert!(rows[0].mean_nce.is_some());
        assert_eq!(rows[0].relative_pct, Some(0.0));
    }

    #[test]
    fn strategy_axis_swaps_formulation_per_cell() {
        let data = generate(synth_config(3)).unwrap();
        let slices = split_by_days(&data.events, &data.meta.day_boundaries).unwrap();
        let rows = run_sweep(
            &slices,
            &model_config(ListStrategy::IcSampling),
            &RecurrentSchedule::default(),
            ListStrategy::IcSampling,
            None,
            &SweepAxis::Strategy(vec![ListStrategy::IcSampling, ListStrategy::UcSampling]),
            0,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].label, "uc-sampling");
        assert!(rows[1].relative_pct.is_some());
        let err = run_sweep(
            &slices,
            &model_config(ListStrategy::IcSampling),
            &RecurrentSchedule::default(),
            ListStrategy::IcSampling,
            None,
            &SweepAxis::HashSize(vec![256, 512]),
            5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
