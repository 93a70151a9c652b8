//! Contrastive debiasing trainer.
//!
//! Per step: draw a uniform target domain per sample, form the
//! bias-transformed view with the frozen generator, augment both views,
//! then jointly minimize cross entropy on both views (against the
//! original labels) plus `lambda * L_CL`, the temperature-scaled
//! contrastive loss tying each (original, transformed) pair together.

pub mod augment;
pub mod encoder;
pub mod nt_xent;
pub mod train;
pub mod views;

pub use augment::{augment, AugmentationPolicy, ColorDistortionPolicy, CropPolicy, FlipPolicy};
pub use encoder::{DebiasModel, EncoderArch, EncoderKind};
pub use nt_xent::{nt_xent, nt_xent_loss, sample_target_domain};
pub use train::{cdvg_step, train_cdvg, train_vanilla, DebiasTrainer, RunContext, StepDetail, StepLosses};
pub use views::{TranslationCache, ViewSource};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DebiasError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("zero-norm projection row {0}: cosine similarity undefined")]
    ZeroNormRow(usize),
    #[error("non-finite loss at epoch {epoch} step {step}: {losses:?}")]
    NonFinite { epoch: usize, step: usize, losses: StepLosses },
    #[error(transparent)]
    Translator(#[from] crate::translator::TranslatorError),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] crate::nn::store_io::CheckpointError),
    #[error("io error: {0}")]
    Io(String),
}

/// Which part of the method is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full method.
    Full,
    /// Generator replaced by the identity; the second view is an
    /// independent augmentation draw of the original image.
    NoG,
    /// Contrastive term dropped; cross entropy on both views only.
    NoCl,
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Ablation::Full => write!(f, "full"),
            Ablation::NoG => write!(f, "no-g"),
            Ablation::NoCl => write!(f, "no-cl"),
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = DebiasError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-g" | "no_g" => Ok(Ablation::NoG),
            "no-cl" | "no_cl" => Ok(Ablation::NoCl),
            other => Err(DebiasError::Config(format!("unknown ablation: {other}"))),
        }
    }
}

/// Hyperparameters of the debiasing trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the contrastive term.
    pub lambda_cl: f64,
    /// NT-Xent temperature.
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Cosine annealing floor as a fraction of `lr`.
    pub lr_floor_factor: f64,
    pub ablation: Ablation,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub augment: AugmentationPolicy,
}

impl TrainConfig {
    /// Colored MNIST profile: perceptron encoder, batch 256, 200 epochs,
    /// lr 1e-3 cosine-annealed to 1e-6, temperature 0.01, no flipping and
    /// no grayscale (grayscale would erase the color bias axis).
    pub fn colored_mnist() -> Self {
        TrainConfig {
            lambda_cl: 1.0,
            temperature: 0.01,
            batch_size: 256,
            epochs: 200,
            lr: 1e-3,
            lr_floor_factor: 1e-3,
            ablation: Ablation::Full,
            seed: 0,
            encoder: EncoderKind::Mlp,
            augment: AugmentationPolicy::colored_mnist(),
        }
    }

    /// Corrupted CIFAR-10 profile: randomly initialized 18-layer residual
    /// encoder, 500 epochs.
    pub fn corrupted_cifar10() -> Self {
        TrainConfig {
            lambda_cl: 1.0,
            temperature: 0.01,
            batch_size: 256,
            epochs: 500,
            lr: 1e-3,
            lr_floor_factor: 1e-3,
            ablation: Ablation::Full,
            seed: 0,
            encoder: EncoderKind::ResNet18,
            augment: AugmentationPolicy::corrupted_cifar10(),
        }
    }

    pub fn validate(&self) -> Result<(), DebiasError> {
        if self.lambda_cl < 0.0 || !self.lambda_cl.is_finite() {
            return Err(DebiasError::Config(format!("lambda_cl must be >= 0, got {}", self.lambda_cl)));
        }
        if self.temperature <= 0.0 || !self.temperature.is_finite() {
            return Err(DebiasError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.batch_size < 1 {
            return Err(DebiasError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Effective learning rate at a 0-based epoch (cosine annealing).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let floor = self.lr * self.lr_floor_factor;
        if self.epochs <= 1 {
            return self.lr;
        }
        let t = epoch as f64 / self.epochs as f64;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
