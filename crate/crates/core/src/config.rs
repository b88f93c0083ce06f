//! Run configuration files (TOML) and the manifest that makes every run
//! reproducible. A config names the data, the model, and the protocol; the
//! command line only picks the file and may override the output directory
//! and seed. Unknown keys are rejected so typos fail before any data is read.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::synthetic::SyntheticConfig;
use crate::listbuilder::clusters::ClusteringConfig;
use crate::trainer::{ListStrategy, RecurrentSchedule, SweepAxis};
use crate::types::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Day-by-day warm-started training with next-day-head evaluation.
    #[default]
    Recurrent,
    /// Per-user temporal split, trained once, scored on the held-out tail.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Canonical event log (binary or text).
    pub events: PathBuf,
    /// Dataset metadata sidecar with the day boundaries.
    pub meta: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub strategy: ListStrategy,
    pub eval_head_size: usize,
    pub passes_per_day: usize,
    pub warm_start: bool,
    /// Static mode: per-user fraction of events that train.
    pub train_frac: f64,
    /// Static mode: passes over the training half.
    pub epochs: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            strategy: ListStrategy::IcSampling,
            eval_head_size: 10_000,
            passes_per_day: 1,
            warm_start: true,
            train_frac: 0.8,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Run directory; everything the run writes lands under it.
    pub dir: PathBuf,
    pub save_checkpoint: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: PathBuf::new(), save_checkpoint: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(flatten)]
    pub axis: SweepAxis,
    /// Row the relative column is measured against.
    #[serde(default)]
    pub baseline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    /// Future events the frozen model is scored on.
    pub events: PathBuf,
    pub window_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default)]
    pub mode: RunMode,
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub clustering: Option<ClusteringConfig>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub drift: Option<DriftSpec>,
}

impl TrainSpec {
    pub fn schedule(&self) -> RecurrentSchedule {
        RecurrentSchedule {
            eval_head_size: self.run.eval_head_size,
            passes_per_day: self.run.passes_per_day,
            warm_start: self.run.warm_start,
        }
    }

    /// Does any part of this spec (base run or a sweep cell) use clustering?
    fn needs_clustering(&self) -> bool {
        if self.run.strategy == ListStrategy::UcClustering {
            return true;
        }
        matches!(&self.sweep, Some(SweepSpec { axis: SweepAxis::Strategy(v), .. })
            if v.contains(&ListStrategy::UcClustering))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule().validate()?;
        if self.run.strategy.formulation() != self.model.formulation {
            return Err(Error::config(format!(
                "run.strategy {} needs model.formulation {}, config says {}",
                self.run.strategy,
                self.run.strategy.formulation(),
                self.model.formulation
            )));
        }
        if self.needs_clustering() && self.clustering.is_none() {
            return Err(Error::config("uc-clustering strategy needs a [clustering] section"));
        }
        if let Some(c) = &self.clustering {
            c.validate()?;
        }
        match self.mode {
            RunMode::Static => {
                if !(self.run.train_frac > 0.0 && self.run.train_frac < 1.0) {
                    return Err(Error::config("run.train_frac must be inside (0, 1)"));
                }
                if self.run.strategy == ListStrategy::UcClustering {
                    return Err(Error::config(
                        "static mode has no day roll to update a cluster map on",
                    ));
                }
                if self.sweep.is_some() || self.drift.is_some() {
                    return Err(Error::config("sweep and drift sections need recurrent mode"));
                }
            }
            RunMode::Recurrent => {}
        }
        if let Some(s) = &self.sweep {
            if s.axis.is_empty() {
                return Err(Error::config("sweep.values must be non-empty"));
            }
            if s.baseline >= s.axis.len() {
                return Err(Error::config(format!(
                    "sweep.baseline {} out of range for {} values",
                    s.baseline,
                    s.axis.len()
                )));
            }
        }
        if let Some(d) = &self.drift {
            if d.window_seconds <= 0 {
                return Err(Error::config("drift.window_seconds must be positive"));
            }
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(Error::config("output.dir is required (or pass --out)"));
        }
        Ok(())
    }
}

/// Synthetic-ingestion config: the generator plus an optional extra draw of
/// the day after the horizon, used as probe material for staleness runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub generator: SyntheticConfig,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub events: usize,
    /// Stream tag; any value gives an independent draw of the probe day.
    pub tag: u64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec { events: 10_000, tag: 1 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if let Some(p) = &self.probe {
            if p.events == 0 {
                return Err(Error::config("probe.events must be positive"));
            }
        }
        Ok(())
    }
}

fn parse_toml_str<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse { line: 0, msg: format!("{origin}: {e}") })
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_toml_str(&text, &path.display().to_string())
}

pub fn load_train_spec(path: &Path) -> Result<TrainSpec> {
    parse_toml(path)
}

pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    parse_toml(path)
}

/// Parse a run config from TOML text (embedding hosts pass strings, not files).
pub fn train_spec_from_str(text: &str) -> Result<TrainSpec> {
    parse_toml_str(text, "train spec")
}

/// Parse a generator config from TOML text.
pub fn synthetic_spec_from_str(text: &str) -> Result<SyntheticSpec> {
    parse_toml_str(text, "generator spec")
}

/// Everything needed to repeat a run: tool version, the subcommand, and the
/// fully resolved spec (overrides applied). Deliberately free of wall-clock
/// state so a repeated run writes an identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub spec: TrainSpec,
}

impl Manifest {
    pub fn new(command: &str, spec: TrainSpec) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            spec,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::config(format!("manifest serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: 0, msg: format!("manifest: {e}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Formulation;
    use std::io::Write;

    fn write_file(dir: &tempfile::TempDir, name: &str, contents: &str) -> PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const FULL: &str = r#"
mode = "recurrent"

[data]
events = "data/events.bin"
meta = "data/meta.json"

[model]
formulation = "user-centric"
pooling = "attention"
embed_dim = 16
hash_size = 4096
list_capacity = 128

[run]
strategy = "uc-clustering"
eval_head_size = 5000
passes_per_day = 1

[clustering]
max_cluster_size = 64
min_edge_weight = 1.0

[output]
dir = "runs/ucr"
save_checkpoint = true

[sweep]
axis = "hash-size"
values = [1024, 4096, 16384]
baseline = 0

[drift]
events = "data/probe.bin"
window_seconds = 3600
"#;

    #[test]
    fn full_spec_parses_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "run.toml", FULL);
        let spec = load_train_spec(&path).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.model.embed_dim, 16);
        assert_eq!(spec.run.strategy, ListStrategy::UcClustering);
        assert_eq!(spec.schedule().eval_head_size, 5000);
        assert_eq!(spec.sweep.as_ref().unwrap().axis.len(), 3);
        assert!(spec.drift.is_some());
    }

    #[test]
    fn unknown_keys_and_typos_fail_the_parse() {
        let dir = tempfile::tempdir().unwrap();
        let bad = FULL.replace("eval_head_size", "eval_head_sixe");
        let path = write_file(&dir, "bad.toml", &bad);
        let err = load_train_spec(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn strategy_formulation_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad = FULL.replace("formulation = \"user-centric\"", "formulation = \"hybrid\"");
        let path = write_file(&dir, "bad.toml", &bad);
        let err = load_train_spec(&path).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn clustering_section_is_required_when_any_cell_clusters() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = FULL.replace("[clustering]\nmax_cluster_size = 64\nmin_edge_weight = 1.0\n", "");
        bad = bad.replace("strategy = \"uc-clustering\"", "strategy = \"uc-sampling\"");
        bad = bad.replace(
            "axis = \"hash-size\"\nvalues = [1024, 4096, 16384]",
            "axis = \"strategy\"\nvalues = [\"uc-sampling\", \"uc-clustering\"]",
        );
        let path = write_file(&dir, "bad.toml", &bad);
        let err = load_train_spec(&path).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("clustering"));
    }

    #[test]
    fn static_mode_rejects_recurrent_only_sections() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = load_train_spec(&write_file(&dir, "run.toml", FULL)).unwrap();
        spec.mode = RunMode::Static;
        assert!(spec.validate().is_err());
        spec.sweep = None;
        spec.drift = None;
        // Clustering strategy itself is also recurrent-only.
        assert!(spec.validate().is_err());
    }

    #[test]
    fn minimal_spec_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let minimal = r#"
[data]
events = "e.bin"
meta = "m.json"
[output]
dir = "out"
"#;
        let path = write_file(&dir, "min.toml", minimal);
        let spec = load_train_spec(&path).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.mode, RunMode::Recurrent);
        assert_eq!(spec.run.strategy, ListStrategy::IcSampling);
        assert_eq!(spec.model.formulation, Formulation::ItemCentric);
        assert!(spec.run.warm_start);
    }

    #[test]
    fn synthetic_spec_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
[generator]
num_users = 100
items_per_day = 10
num_days = 5
[probe]
events = 2000
"#;
        let path = write_file(&dir, "synth.toml", text);
        let spec = load_synthetic_spec(&path).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.generator.num_users, 100);
        assert_eq!(spec.probe.as_ref().unwrap().events, 2000);
        assert_eq!(spec.probe.as_ref().unwrap().tag, 1);
    }

    #[test]
    fn manifest_round_trips_and_carries_the_resolved_spec() {
        let dir = tempfile::tempdir().unwrap();
        let spec = load_train_spec(&write_file(&dir, "run.toml", FULL)).unwrap();
        let m = Manifest::new("train", spec);
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }
}
