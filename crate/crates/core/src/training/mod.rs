//! Joint optimization of the stance and contrastive objectives.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod trainer;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::autodiff::CE_EPSILON;
use crate::contrastive::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, EpochRecord};
pub use model::{Backend, ModelConfig, StanceModel};
pub use optim::Adam;
pub use trainer::{fit, fit_with_observer, StepMetrics, Trainer};

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    #[default]
    Full,
    /// Uniform pooling replaces retrieval attention.
    Concat,
    /// Random masking replaces topic masking.
    NoTopicmask,
    /// Contrastive weight forced to zero.
    NoCl,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "FULL" => Ok(Variant::Full),
            "CONCAT" => Ok(Variant::Concat),
            "NO_TOPICMASK" => Ok(Variant::NoTopicmask),
            "NO_CL" => Ok(Variant::NoCl),
            other => Err(Error::config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the contrastive loss.
    pub eta: f64,
    pub l2_coefficient: f64,
    pub temperature: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Epochs without dev improvement before stopping; `None` runs all epochs.
    pub patience: Option<usize>,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Keep the contrastive loss in the reported total but send no gradient
    /// through it.
    pub detach_contrastive: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 32,
            epochs: 30,
            eta: 0.1,
            l2_coefficient: 1e-5,
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            variant: Variant::Full,
            patience: Some(5),
            grad_clip: Some(1.0),
            detach_contrastive: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.eta >= 0.0) || !(self.l2_coefficient >= 0.0) {
            return Err(Error::config("eta and l2_coefficient must be nonnegative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::config("grad_clip must be positive"));
        }
        Ok(())
    }

    /// η after applying the variant.
    pub fn effective_eta(&self) -> f64 {
        match self.variant {
            Variant::NoCl => 0.0,
            _ => self.eta,
        }
    }
}

/// −Σ_i Σ_j y_ij log ŷ_ij summed over the batch, with ŷ floored at 1e-12.
pub fn cls_loss(predicted: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != labels.dim() {
        return Err(Error::contract(format!(
            "prediction shape {:?} differs from label shape {:?}",
            predicted.dim(),
            labels.dim()
        )));
    }
    let mut loss = 0.0;
    let mut clamped = 0;
    for (p, y) in predicted.iter().zip(labels.iter()) {
        if *y != 0.0 {
            if *p < CE_EPSILON {
                clamped += 1;
            }
            loss -= y * p.max(CE_EPSILON).ln();
        }
    }
    if clamped > 0 {
        warn!(clamped, "predicted probability at a gold label fell below 1e-12 and was clamped");
    }
    Ok(loss)
}

/// cls + η·cl + λ·‖Θ‖², with η taken from the variant.
pub fn total_loss(cls: f64, cl: f64, params_sq_norm: f64, config: &TrainConfig) -> f64 {
    cls + config.effective_eta() * cl + config.l2_coefficient * params_sq_norm
}
