use std::path::{Path, PathBuf};

use icu_policy::cohort_sim::{SimConfig, DEFAULT_RATIOS};
use icu_policy::model::{ModelConfig, Precision, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [DEFAULT_RATIOS.0, DEFAULT_RATIOS.1, DEFAULT_RATIOS.2],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Ridge strength of the severity-score baselines.
    pub baseline_l2: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            baseline_l2: icu_policy::baselines::DEFAULT_L2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub k: usize,
    pub kmeans_seed: u64,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub tsne_seed: u64,
    /// Test patients embedded, taken in cohort order.
    pub max_points: usize,
    /// Groups used to color the embedding by risk and by total intervention score.
    pub quantile_groups: usize,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            k: icu_policy::analytics::DEFAULT_K,
            kmeans_seed: 0,
            perplexity: 30.0,
            tsne_iterations: 1000,
            tsne_seed: 0,
            max_points: 2000,
            quantile_groups: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Existing cohort in JSON lines; replaces simulation when set.
    pub cohort: Option<PathBuf>,
    /// Intervention definitions in JSON; the built-in set when unset.
    pub interventions: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: PathBuf::from("run"),
            cohort: None,
            interventions: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub precision: Precision,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub analytics: AnalyticsConfig,
    pub io: IoConfig,
    /// One training run per seed.
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            precision: Precision::Single,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            analytics: AnalyticsConfig::default(),
            io: IoConfig::default(),
            seeds: vec![0],
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config(format!("`{field}`: {}", message.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.io.cohort.is_none() {
            self.sim.validate()?;
        }
        let [a, b, c] = self.split.ratios;
        if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(invalid("split.ratios", "must be three non-negative fractions summing to 1"));
        }
        self.model.validate()?;
        self.train.validate()?;
        if !(self.eval.baseline_l2.is_finite() && self.eval.baseline_l2 >= 0.0) {
            return Err(invalid("eval.baseline_l2", "must be a finite real >= 0"));
        }
        let a = &self.analytics;
        if a.k == 0 {
            return Err(invalid("analytics.k", "must be at least 1"));
        }
        if !(a.perplexity.is_finite() && a.perplexity > 0.0) {
            return Err(invalid("analytics.perplexity", "must be positive"));
        }
        if a.tsne_iterations == 0 {
            return Err(invalid("analytics.tsne_iterations", "must be at least 1"));
        }
        if a.max_points < a.k {
            return Err(invalid("analytics.max_points", "must be at least analytics.k"));
        }
        if a.quantile_groups == 0 {
            return Err(invalid("analytics.quantile_groups", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "list at least one seed"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        Ok(())
    }

    /// SHA-256 of the whole configuration.
    pub fn hash(&self) -> String {
        digest(&[serde_json::to_value(self).expect("config serializes")])
    }

    /// Hash of the sections a stage's outputs depend on, upstream stages included.
    pub fn stage_hash(&self, stage: Stage) -> String {
        // The generator settings do not shape an ingested cohort.
        let sim = if self.io.cohort.is_some() { serde_json::Value::Null } else { v(&self.sim) };
        let mut parts = vec![sim, v(&self.split), v(&self.io.cohort)];
        if stage != Stage::Simulate {
            parts.push(v(&self.io.interventions));
        }
        if !matches!(stage, Stage::Simulate | Stage::Label) {
            parts.extend([v(&self.model), v(&self.precision), v(&self.train), v(&self.seeds), v(&self.eval)]);
        }
        if stage == Stage::Analyze {
            parts.push(v(&self.analytics));
        }
        digest(&parts)
    }
}

fn v<T: Serialize>(x: &T) -> serde_json::Value {
    serde_json::to_value(x).expect("config serializes")
}

fn digest(parts: &[serde_json::Value]) -> String {
    let text = serde_json::to_string(parts).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Simulate,
    Label,
    Train,
    Evaluate,
    Analyze,
    Compare,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Analyze => "analyze",
            Stage::Compare => "compare",
            Stage::Report => "report",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Simulate => &[],
            Stage::Label => &[Stage::Simulate],
            Stage::Train => &[Stage::Simulate, Stage::Label],
            Stage::Evaluate | Stage::Analyze | Stage::Compare => &[Stage::Simulate, Stage::Label, Stage::Train],
            Stage::Report => &[Stage::Simulate, Stage::Label, Stage::Train, Stage::Evaluate],
        }
    }
}
