//! TOML experiment configuration.
//!
//! ```toml
//! run_label = "standard"
//! output_dir = "runs/standard"
//! eval_ks = [1, 3, 5]
//!
//! [data]
//! num_classes = 10
//! head_count = 1000
//! decay = 0.55
//! feature_dim = 8
//! correlation_groups = [[0, 3, 6], [1, 4, 8]]
//! within_group_angle = 0.25
//! noise_sigma = 0.6
//! seed = 0
//!
//! [train]
//! epochs = 40
//! batch_size = 32
//! learning_rate = 0.01
//! momentum = 0.9
//! mu = 0.9
//! seed = 0
//!
//! [train.loss]
//! kind = "CB_PC"
//! beta = 0.9999
//! cb_normalize = true
//!
//! [train.initial_pcm]
//! source = "pretrain"
//! ```
//!
//! Relative paths are resolved against the working directory.

use std::path::{Path, PathBuf};

use pclab_core::datagen::{class_sizes, GridSpec, LongTailSpec};
use pclab_core::loss::{LossConfig, LossKind};
use pclab_core::model::TrainConfig;
use pclab_core::pcm::PcmEstimationConfig;
use pclab_core::CorrelationMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_label: String,
    pub output_dir: PathBuf,
    #[serde(default = "default_ks")]
    pub eval_ks: Vec<usize>,
    pub data: LongTailSpec,
    pub train: TrainSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub boundary: Option<GridSpec>,
}

fn default_ks() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_true")]
    pub pcm_refresh: bool,
    #[serde(default)]
    pub warmup_epochs: usize,
    pub seed: u64,
    pub loss: LossSection,
    #[serde(default)]
    pub initial_pcm: InitialPcm,
    #[serde(default)]
    pub pcm_estimation: PcmEstimationConfig,
}

fn default_mu() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gain")]
    pub pcm_gain: f64,
    #[serde(default)]
    pub cb_normalize: bool,
}

fn default_beta() -> f64 {
    0.9999
}

fn default_gain() -> f64 {
    1.0
}

/// Where the correlation matrix used in the first epoch comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPcm {
    /// Every row `1/n`.
    Uniform,
    /// Train the same configuration without the correlation term (and
    /// without refresh), then estimate the matrix from its validation
    /// predictions.
    #[default]
    Pretrain,
    /// Load a saved PCM checkpoint.
    Checkpoint { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default = "default_mus")]
    pub mus: Vec<f64>,
    /// Also run correlation losses with the initial matrix frozen.
    #[serde(default = "default_true")]
    pub include_static: bool,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            losses: default_losses(),
            mus: default_mus(),
            include_static: true,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_losses() -> Vec<LossKind> {
    LossKind::ALL.to_vec()
}

fn default_mus() -> Vec<f64> {
    vec![0.0, 0.5, 0.9]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path)
    }

    /// Replaces both the data and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid =
            |field: &str, e: pclab_core::Error| CliError::ConfigInvalid(format!("{field}: {e}"));
        self.data.validate().map_err(|e| invalid("data", e))?;
        let n = self.data.num_classes;
        if self.eval_ks.is_empty() {
            return Err(CliError::ConfigInvalid("eval_ks: must not be empty".into()));
        }
        if let Some(&k) = self.eval_ks.iter().find(|&&k| k == 0 || k > n) {
            return Err(CliError::ConfigInvalid(format!(
                "eval_ks: k = {k} outside [1, {n}]"
            )));
        }
        if self.train.warmup_epochs > self.train.epochs {
            return Err(CliError::ConfigInvalid(
                "train.warmup_epochs: exceeds train.epochs".into(),
            ));
        }
        // Gain against actual correlations is checked once the matrix exists.
        let placeholder =
            CorrelationMatrix::zeros(&self.data.labels().map_err(|e| invalid("data", e))?);
        let cfg = self.train_config(&placeholder);
        cfg.validate().map_err(|e| invalid("train", e))?;
        cfg.loss.validate(n).map_err(|e| invalid("train.loss", e))?;
        if self.ablate.seeds.is_empty() || self.ablate.losses.is_empty() {
            return Err(CliError::ConfigInvalid(
                "ablate: seeds and losses must not be empty".into(),
            ));
        }
        if let Some(&mu) = self.ablate.mus.iter().find(|mu| !(0.0..=1.0).contains(*mu)) {
            return Err(CliError::ConfigInvalid(format!(
                "ablate.mus: {mu} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<u64> {
        class_sizes(&self.data)
    }

    /// Loss configuration of `kind` with the hyper-parameters of this file.
    pub fn loss_config(&self, kind: LossKind, pcm: &CorrelationMatrix) -> LossConfig {
        let l = &self.train.loss;
        LossConfig {
            kind,
            pcm: kind.uses_pcm().then(|| pcm.clone()),
            beta: kind.class_balanced().then_some(l.beta),
            class_counts: kind.class_balanced().then(|| self.class_counts()),
            pcm_gain: l.pcm_gain,
            cb_normalize: l.cb_normalize,
        }
    }

    /// Training configuration for the configured loss. Refresh only applies
    /// to losses that read the matrix.
    pub fn train_config(&self, pcm: &CorrelationMatrix) -> TrainConfig {
        let t = &self.train;
        let kind = t.loss.kind;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            loss: self.loss_config(kind, pcm),
            mu: t.mu,
            pcm_refresh: t.pcm_refresh && kind.uses_pcm(),
            warmup_epochs: t.warmup_epochs,
            pcm_estimation: t.pcm_estimation,
            seed: t.seed,
        }
    }
}
