//! Sweep configuration, read from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Operation, RangeSpec, DEFAULT_INPUT_SIZE, DEFAULT_OVERLAP_RATIO, DEFAULT_SUBSET_RATIO};
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_EPSILON, DEFAULT_N_SIM};
use crate::model::{ModelKind, DEFAULT_HIDDEN_SIZE};
use crate::stats::DEFAULT_CONFIDENCE;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangePair {
    pub interp: RangeSpec,
    pub extrap: RangeSpec,
}

impl Default for RangePair {
    fn default() -> Self {
        Self {
            interp: RangeSpec::new(1.0, 2.0).expect("valid"),
            extrap: RangeSpec::new(2.0, 6.0).expect("valid"),
        }
    }
}

/// Either a number of seeds (`0..n`) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn values(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

fn default_ranges() -> Vec<RangePair> {
    vec![RangePair::default()]
}
fn default_input_size() -> Vec<usize> {
    vec![DEFAULT_INPUT_SIZE]
}
fn default_subset_ratio() -> Vec<f64> {
    vec![DEFAULT_SUBSET_RATIO]
}
fn default_overlap_ratio() -> Vec<f64> {
    vec![DEFAULT_OVERLAP_RATIO]
}
fn default_hidden_size() -> Vec<usize> {
    vec![DEFAULT_HIDDEN_SIZE]
}

/// One cross product of models, operations, ranges and task parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub models: Vec<ModelKind>,
    pub ops: Vec<Operation>,
    #[serde(default = "default_ranges")]
    pub ranges: Vec<RangePair>,
    #[serde(default = "default_input_size")]
    pub input_size: Vec<usize>,
    #[serde(default = "default_subset_ratio")]
    pub subset_ratio: Vec<f64>,
    #[serde(default = "default_overlap_ratio")]
    pub overlap_ratio: Vec<f64>,
    #[serde(default = "default_hidden_size")]
    pub hidden_size: Vec<usize>,
    pub seeds: Seeds,
    /// Overrides the shared iteration budget for this block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: &str| Error::Config(format!("experiment '{}': {msg}", self.name));
        if self.name.is_empty() {
            return Err(Error::Config("experiment name must not be empty".into()));
        }
        if self.models.is_empty()
            || self.ops.is_empty()
            || self.ranges.is_empty()
            || self.input_size.is_empty()
            || self.subset_ratio.is_empty()
            || self.overlap_ratio.is_empty()
            || self.hidden_size.is_empty()
        {
            return Err(ctx("every list must be non-empty"));
        }
        let seeds = self.seeds.values();
        if seeds.is_empty() {
            return Err(ctx("no seeds"));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(ctx("seeds must be distinct"));
        }
        for r in &self.ranges {
            if r.interp == r.extrap {
                return Err(ctx("interpolation and extrapolation ranges are identical"));
            }
        }
        if self.hidden_size.contains(&0) {
            return Err(ctx("hidden size must be positive"));
        }
        if self.iterations == Some(0) {
            return Err(ctx("iterations must be positive"));
        }
        Ok(())
    }
}

/// Top-level sweep configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub threshold: ThresholdConfig,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Keep full metric traces next to the records.
    #[serde(default)]
    pub store_traces: bool,
    #[serde(rename = "experiment")]
    pub experiments: Vec<Experiment>,
}

fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub epsilon: f64,
    pub n_sim: usize,
    pub seed: u64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            n_sim: DEFAULT_N_SIM,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: SweepConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            return Err(Error::Config("at least one [[experiment]] is required".into()));
        }
        let names: BTreeSet<&str> = self.experiments.iter().map(|e| e.name.as_str()).collect();
        if names.len() != self.experiments.len() {
            return Err(Error::Config("experiment names must be unique".into()));
        }
        for e in &self.experiments {
            e.validate()?;
        }
        if !(self.threshold.epsilon >= 0.0) || self.threshold.n_sim == 0 {
            return Err(Error::Config("threshold epsilon must be >= 0 and n_sim positive".into()));
        }
        crate::stats::check_confidence(self.confidence)?;
        // seed and iterations are set per trial; validate the rest once
        TrainConfig {
            iterations: self.train.iterations.max(self.train.eval_every),
            ..self.train.clone()
        }
        .validate()
    }

    /// Short hash of the normalized configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[experiment]]
        name = "add"
        models = ["nac-add", "linear"]
        ops = ["add"]
        seeds = 3
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = SweepConfig::from_toml_str(MINIMAL).unwrap();
        let e = &c.experiments[0];
        assert_eq!(e.input_size, vec![100]);
        assert_eq!(e.ranges, vec![RangePair::default()]);
        assert_eq!(e.seeds.values(), vec![0, 1, 2]);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.threshold.n_sim, 1_000_000);
    }

    #[test]
    fn ranges_and_overrides_parse() {
        let c = SweepConfig::from_toml_str(
            r#"
            confidence = 0.9
            [train]
            iterations = 5000
            [train.adam]
            lr = 0.01
            [[experiment]]
            name = "ranges"
            models = ["nac-mul", "nalu"]
            ops = ["mul", "/"]
            ranges = [
                { interp = [-2, 2], extrap = [[-6, -2], [2, 6]] },
                { interp = [0.1, 0.2], extrap = [0.2, 2] },
            ]
            seeds = [4, 8]
            iterations = 100
            "#,
        )
        .unwrap();
        assert_eq!(c.train.iterations, 5000);
        assert_eq!(c.train.adam.lr, 0.01);
        assert_eq!(c.train.adam.beta1, 0.9);
        let e = &c.experiments[0];
        assert_eq!(e.ops, vec![Operation::Mul, Operation::Div]);
        assert_eq!(e.ranges[0].extrap.intervals().len(), 2);
        assert_eq!(e.iterations, Some(100));
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            "experiment = []",
            r#"[[experiment]]
               name = "x"
               models = []
               ops = ["add"]
               seeds = 1"#,
            r#"[[experiment]]
               name = "x"
               models = ["linear"]
               ops = ["add"]
               seeds = [1, 1]"#,
            r#"[[experiment]]
               name = "x"
               models = ["linear"]
               ops = ["add"]
               seeds = 1
               typo = 3"#,
        ] {
            assert!(SweepConfig::from_toml_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = SweepConfig::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.iterations = 7;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
