use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EnsembleMode;
use crate::heads::{HeadConfig, HeadKind};
use crate::losses::{LossKind, Mixture, DEFAULT_TAU};

/// Where training and test samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Samples near a random union of subspaces.
    Synthetic {
        ambient_dim: usize,
        clusters: usize,
        rank: usize,
        per_cluster: usize,
        test_per_cluster: usize,
        /// Noise level of the samples themselves (before augmentation).
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        axis_aligned: bool,
    },
    /// IDX image and label files.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
}

impl DataConfig {
    pub fn ensemble_mode(&self) -> EnsembleMode {
        match self {
            DataConfig::Synthetic {
                axis_aligned: true, ..
            } => EnsembleMode::AxisAligned,
            _ => EnsembleMode::Random,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub mixture: Mixture,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub min_learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    /// Rows per step, two views per sample.
    pub batch_size: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    1e-3
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

/// A complete experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Augmentation noise: each view keeps cosine at least `1 - augment_noise`.
    pub augment_noise: f64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Per-class size of the fixed probe batch used for attention logging.
    #[serde(default = "default_probe_per_class")]
    pub probe_per_class: usize,
    /// Fraction of training embeddings used to fit the linear probe.
    #[serde(default = "default_probe_fraction")]
    pub probe_fraction: f64,
    /// Record every attention head instead of the first.
    #[serde(default)]
    pub all_heads: bool,
}

fn default_probe_per_class() -> usize {
    8
}

fn default_probe_fraction() -> f64 {
    0.1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let o = &self.optimizer;
        if o.batch_size < 4 || o.batch_size % 2 != 0 {
            return bad(format!(
                "batch_size must be even and at least 4, got {}",
                o.batch_size
            ));
        }
        if !(o.learning_rate >= 0.0) || !(o.min_learning_rate >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&o.momentum) || o.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.augment_noise) {
            return bad(format!(
                "augment_noise must lie in [0, 1), got {}",
                self.augment_noise
            ));
        }
        if !(self.loss.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.loss.tau));
        }
        if self.encoder.output != self.head.dim {
            return bad(format!(
                "encoder output {} does not match head width {}",
                self.encoder.output, self.head.dim
            ));
        }
        if self.encoder.hidden == 0 || self.encoder.output == 0 {
            return bad("encoder widths must be positive".into());
        }
        if self.head.kind == HeadKind::Transformer && self.head.depth > 0 {
            if self.head.heads == 0 || self.head.dim % self.head.heads != 0 {
                return bad(format!(
                    "{} heads do not divide width {}",
                    self.head.heads, self.head.dim
                ));
            }
        }
        if !(self.probe_fraction > 0.0 && self.probe_fraction <= 1.0) {
            return bad("probe_fraction must lie in (0, 1]".into());
        }
        if let DataConfig::Synthetic {
            per_cluster,
            test_per_cluster,
            clusters,
            noise,
            ..
        } = &self.data
        {
            if *per_cluster == 0 || *test_per_cluster < 2 || *clusters == 0 {
                return bad("synthetic data needs samples in every cluster".into());
            }
            if !(0.0..1.0).contains(noise) {
                return bad(format!("noise must lie in [0, 1), got {noise}"));
            }
        }
        Ok(())
    }

    /// Desk-scale synthetic run: 3 clusters in 32 dimensions, 4-block head.
    pub fn synthetic_default(seed: u64) -> Self {
        RunConfig {
            seed,
            data: DataConfig::Synthetic {
                ambient_dim: 32,
                clusters: 3,
                rank: 4,
                per_cluster: 300,
                test_per_cluster: 100,
                noise: 0.0,
                axis_aligned: false,
            },
            augment_noise: 0.1,
            encoder: EncoderConfig {
                hidden: 64,
                output: 32,
            },
            head: HeadConfig::new(HeadKind::Transfusion, 32, 4),
            loss: LossConfig {
                kind: LossKind::NtXent,
                tau: DEFAULT_TAU,
                mixture: Mixture::Halved,
            },
            optimizer: OptimizerConfig {
                learning_rate: 0.02,
                min_learning_rate: 0.0,
                momentum: 0.9,
                weight_decay: 1e-3,
                epochs: 100,
                batch_size: 64,
                schedule: Schedule::Cosine,
            },
            probe_per_class: 8,
            probe_fraction: 0.1,
            all_heads: false,
        }
    }
}
