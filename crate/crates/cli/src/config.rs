//! The run configuration: one JSON document with an object per stage.

use std::path::Path;

use croplrp::dataio::SynthConfig;
use croplrp::lrp::LrpConfig;
use croplrp::model::{ModelConfig, PositionalEncoding};
use croplrp::timeframe::{AggregateOptions, PEAK_THRESHOLD};
use croplrp::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Architecture without the data-dependent sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 1);
        Self {
            d_model: m.d_model,
            n_heads: m.n_heads,
            encoder_dims: m.encoder_dims,
            decoder_dims: m.decoder_dims,
        }
    }
}

impl Architecture {
    pub fn model_config(&self, n_bands: usize, n_timesteps: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_bands,
            max_timesteps: n_timesteps,
            d_model: self.d_model,
            n_heads: self.n_heads,
            encoder_dims: self.encoder_dims.clone(),
            decoder_dims: self.decoder_dims.clone(),
            n_classes,
            positional_encoding: PositionalEncoding::SinusoidalDayOfYear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeframeOptions {
    pub n_list: Vec<usize>,
    pub aggregate: AggregateOptions,
    pub peak_threshold: f64,
}

impl Default for TimeframeOptions {
    fn default() -> Self {
        Self {
            n_list: vec![3, 5, 10],
            aggregate: AggregateOptions::default(),
            peak_threshold: PEAK_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    /// Share of spatial blocks held out as the test region.
    pub test_fraction: f64,
    pub split_seed: u64,
    pub random_trials: usize,
    pub random_seed: u64,
    /// Pruning curves use at most this many samples (first in file order).
    pub max_prune_samples: Option<usize>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            split_seed: 0,
            random_trials: 20,
            random_seed: 0,
            max_prune_samples: Some(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    /// Band-level maps are exported for this many samples (file order).
    pub max_band_maps: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self { max_band_maps: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides every stage seed when set.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub model: Architecture,
    pub train: TrainConfig,
    pub lrp: LrpConfig,
    pub explain: ExplainOptions,
    pub timeframe: TimeframeOptions,
    pub experiments: ExperimentOptions,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| crate::Invalid(format!("config {}: {e}", path.display())).into())
    }

    /// Applies `--seed` (or the config's own `seed`) to every stage.
    pub fn resolve(mut self, seed: Option<u64>) -> anyhow::Result<Self> {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.train.seed = s;
            self.experiments.split_seed = s;
            self.experiments.random_seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> anyhow::Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if !(self.lrp.epsilon >= 0.0) {
            return Err(crate::Invalid("lrp.epsilon must be non-negative".into()).into());
        }
        if self.timeframe.n_list.is_empty() || self.timeframe.n_list.contains(&0) {
            return Err(crate::Invalid("timeframe.n_list needs positive entries".into()).into());
        }
        if !(self.timeframe.peak_threshold > 0.0) {
            return Err(crate::Invalid("timeframe.peak_threshold must be positive".into()).into());
        }
        if self.experiments.random_trials == 0 {
            return Err(crate::Invalid("experiments.random_trials must be at least 1".into()).into());
        }
        Ok(())
    }
}
