//! Experiment configuration file.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmConfig, AlgorithmKind};
use crate::bench::{DEFAULT_SAMPLE_LIMIT, DEFAULT_WARMUP};
use crate::corpus::ColumnSpec;
use crate::evaluation::{validate_cutoffs, DEFAULT_CUTOFFS};
use crate::preprocess::SplitSpec;
use crate::tuning::ParamSpace;

use super::synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Evaluate,
    Tune,
    Stability,
    Bench,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Evaluate, Stage::Tune, Stage::Stability, Stage::Bench];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Evaluate => "evaluate",
            Stage::Tune => "tune",
            Stage::Stability => "stability",
            Stage::Bench => "bench",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage `{s}` (expected evaluate, tune, stability or bench)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset label written into every result row.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
    /// Not echoed into metadata so that the same run written to two
    /// directories yields identical files.
    #[serde(default = "default_output", skip_serializing)]
    pub output_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: BTreeSet<Stage>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    pub algorithms: Vec<AlgorithmEntry>,
}

fn default_name() -> String {
    "dataset".into()
}
fn default_cutoffs() -> Vec<usize> {
    DEFAULT_CUTOFFS.to_vec()
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_stages() -> BTreeSet<Stage> {
    BTreeSet::from([Stage::Evaluate])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Interaction log; relative paths are resolved against the directory
    /// of the configuration file.
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub columns: ColumnSpec,
    /// Generate a corpus instead of reading `path`.
    pub synthetic: Option<SyntheticSpec>,
    /// Replace all timestamps by synthetic ones spread over `span_days`.
    pub synthesize_timestamps: Option<TimestampSynthesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestampSynthesis {
    pub span_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Days held out from the first slice's training data; defaults to
    /// `split.test_days`.
    pub validation_days: Option<i64>,
}

fn default_iterations() -> usize {
    100
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            iterations: default_iterations(),
            validation_days: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_sample_limit")]
    pub sample_limit: usize,
}

fn default_warmup() -> usize {
    DEFAULT_WARMUP
}
fn default_sample_limit() -> usize {
    DEFAULT_SAMPLE_LIMIT
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: default_warmup(),
            sample_limit: default_sample_limit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub kind: AlgorithmKind,
    /// Label used in result rows and file names; defaults to the kind.
    pub name: Option<String>,
    /// Fixed parameters. With tuning enabled they act as defaults that
    /// sampled values override.
    #[serde(default)]
    pub params: toml::Table,
    /// Entries replacing or extending the default search space.
    #[serde(default)]
    pub space: ParamSpace,
}

impl AlgorithmEntry {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    pub fn fixed_config(&self) -> Result<AlgorithmConfig, String> {
        AlgorithmConfig::from_params(self.kind, &self.params).map_err(|e| format!("{}: {e}", self.label()))
    }

    pub fn search_space(&self) -> ParamSpace {
        ParamSpace::with_overrides(self.kind, &self.space)
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut config = Self::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = &config.data.path {
            if p.is_relative() {
                config.data.path = Some(base.join(p));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn has_stage(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validation_days(&self) -> i64 {
        self.tuning.validation_days.unwrap_or(self.split.test_days)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stages.is_empty() {
            return Err("no stage enabled".into());
        }
        validate_cutoffs(&self.cutoffs).map_err(|e| e.to_string())?;
        self.split.validate().map_err(|e| e.to_string())?;
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return Err("data: set either `path` or `synthetic`, not both".into()),
            (None, None) => return Err("data: one of `path` or `synthetic` is required".into()),
            (None, Some(s)) => s.validate().map_err(|e| format!("data.synthetic: {e}"))?,
            (Some(_), None) => {}
        }
        if let Some(ts) = &self.data.synthesize_timestamps {
            if ts.span_days < self.split.required_span_days() {
                return Err(format!(
                    "data.synthesize_timestamps.span_days = {} is below the {} days the split needs",
                    ts.span_days,
                    self.split.required_span_days()
                ));
            }
        }
        if self.algorithms.is_empty() {
            return Err("at least one [[algorithms]] entry is required".into());
        }
        let mut labels = HashSet::new();
        for entry in &self.algorithms {
            let label = entry.label();
            if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(format!("algorithm name `{label}` must be non-empty [A-Za-z0-9_-]"));
            }
            if !labels.insert(label.clone()) {
                return Err(format!("duplicate algorithm name `{label}`"));
            }
            entry.fixed_config()?;
            if self.has_stage(Stage::Tune) {
                entry.search_space().validate().map_err(|e| format!("{label}: {e}"))?;
            }
        }
        if self.has_stage(Stage::Tune) {
            if self.tuning.iterations == 0 {
                return Err("tuning.iterations must be >= 1".into());
            }
            if self.validation_days() < 1 {
                return Err("tuning.validation_days must be >= 1".into());
            }
        }
        if self.has_stage(Stage::Stability) && self.split.test_days < 2 {
            return Err("the stability stage needs split.test_days >= 2".into());
        }
        if self.has_stage(Stage::Bench) && self.bench.sample_limit == 0 {
            return Err("bench.sample_limit must be >= 1".into());
        }
        Ok(())
    }

    /// Configuration text as echoed into the run metadata.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
