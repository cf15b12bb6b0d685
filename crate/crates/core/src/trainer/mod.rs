//! Unimodal pretraining followed by fusion training with frozen modality models.

mod fusion;
mod layout;
mod log;
mod pipeline;
mod pretrain;

pub use fusion::{extract_block, extract_features, train_fusion_fold, FusionOutcome, FusionSample};
pub use layout::{load_fold, load_plan, save_fusion, save_plan, save_unimodal, FoldModels, Layout};
pub use log::{write_log_csv, LogRow};
pub use pipeline::{plan_for, run_fusion, run_pretrain, select};
pub use pretrain::{pretrain_fold, pretrain_modality, sample_loss, PretrainOutcome, SampleRef};

use serde::{Deserialize, Serialize};

use crate::aaf::AafConfig;
use crate::dataio::DataError;
use crate::modality::{Modality, NUM_MODALITIES};
use crate::nnblocks::TransformerConfig;
use crate::tensorgrad::{AdamConfig, TensorError};

/// Clamp used inside every BCE.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: TransformerConfig,
    pub aaf: AafConfig,
    /// Reconstruction weight per modality slot.
    pub alpha: Vec<f64>,
    /// Classification weight per modality slot.
    pub beta: Vec<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub fusion_epochs: usize,
    pub adam: AdamConfig,
    pub fusion_adam: AdamConfig,
    pub clip_norm: Option<f64>,
    /// Cap on training samples drawn per pass; `None` uses all of them.
    pub samples_per_epoch: Option<usize>,
    /// Size of the fixed subsets scored in eval mode for the log.
    pub log_subset: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: TransformerConfig::default(),
            aaf: AafConfig::default(),
            alpha: vec![1.0; NUM_MODALITIES],
            beta: vec![1.0; NUM_MODALITIES],
            batch_size: 32,
            epochs: 20,
            fusion_epochs: 20,
            adam: AdamConfig::default(),
            fusion_adam: AdamConfig::default(),
            clip_norm: None,
            samples_per_epoch: None,
            log_subset: 64,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// One-layer, 16-wide models with two pretraining passes: sized for a
    /// single CPU core on the 40-study synthetic benchmark.
    pub fn desk() -> Self {
        let model =
            TransformerConfig { num_layers: 1, num_heads: 2, d_model: 16, d_ffn_hidden: 16, d_latent: 16, ..TransformerConfig::default() };
        Self { aaf: AafConfig { d_latent: model.d_latent, ..AafConfig::default() }, model, epochs: 2, fusion_epochs: 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: String| Err(TrainError::Config(m));
        if self.alpha.len() != NUM_MODALITIES || self.beta.len() != NUM_MODALITIES {
            return bad(format!("alpha and beta need {NUM_MODALITIES} entries"));
        }
        if self.alpha.iter().chain(&self.beta).any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("loss weights must be finite and non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.aaf.d_latent != self.model.d_latent || self.aaf.num_modalities != NUM_MODALITIES {
            return bad("fusion head must match the latent width and modality count".into());
        }
        if !self.model.epoch_len().is_multiple_of(self.aaf.anomaly_bins) {
            return bad("anomaly bins must divide the epoch length".into());
        }
        if self.folds == 0 {
            return bad("folds must be positive".into());
        }
        Ok(())
    }

    pub fn alpha_of(&self, m: Modality) -> f64 {
        self.alpha[m.index()]
    }

    pub fn beta_of(&self, m: Modality) -> f64 {
        self.beta[m.index()]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("no training samples{0}")]
    Empty(String),
    #[error("training diverged ({0})")]
    Diverged(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Mean squared error over every sample of every epoch.
pub fn loss_reconstruction(x: &[Vec<f64>], x_hat: &[Vec<f64>]) -> Result<f64, TrainError> {
    if x.len() != x_hat.len() || x.iter().zip(x_hat).any(|(a, b)| a.len() != b.len()) {
        return Err(TrainError::Config("reconstruction shapes differ".into()));
    }
    let count: usize = x.iter().map(Vec::len).sum();
    let sum: f64 = x.iter().zip(x_hat).flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q))).sum();
    Ok(sum / count as f64)
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1 − ε]`.
pub fn loss_bce(y: &[f64], y_hat: &[f64]) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .zip(y_hat)
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests;
