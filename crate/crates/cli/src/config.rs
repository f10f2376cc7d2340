//! The `--config` file: TOML, one table per pipeline stage. Every key is
//! optional; command-line flags take precedence over file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use faser_core::encoder::EncoderConfig;
use faser_core::fixtures::SynthConfig;
use faser_core::normalize::DEFAULT_ADDR_MIN;
use faser_core::train::{CircleLossConfig, OptimizerConfig, SamplerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub normalize: NormalizeSection,
    pub vocab: VocabSection,
    /// `vocab_size` is ignored here; it always comes from the vocabulary file.
    pub encoder: EncoderConfig,
    pub sampler: SamplerConfig,
    pub loss: CircleLossConfig,
    pub optimizer: OptimizerConfig,
    pub train: TrainSection,
    pub index: IndexSection,
    pub eval: EvalSection,
    pub fixtures: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    pub register_norm: bool,
    pub addr_min: u64,
    pub reg_table: Option<PathBuf>,
}

impl Default for NormalizeSection {
    fn default() -> Self {
        Self {
            register_norm: false,
            addr_min: DEFAULT_ADDR_MIN,
            reg_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub min_frequency: usize,
    /// 0 keeps global attention on CLS only.
    pub global_every: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self {
            min_frequency: 1,
            global_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub all_pairs: bool,
    pub save_every: Option<u64>,
    /// Parameter initialisation and sampler seed.
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 18,
            all_pairs: false,
            save_every: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub batch_size: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self { batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub num_pools: usize,
    pub negatives: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            num_pools: 1000,
            negatives: 100,
            seed: 0,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
