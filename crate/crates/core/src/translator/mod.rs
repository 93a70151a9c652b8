//! The bias-transformation translator: a multi-domain image translation
//! GAN trained on the biased data itself. The domain classifier inside the
//! discriminator absorbs the bias shortcut, so the generator learns to
//! rewrite the bias attribute toward a requested target domain.

pub mod model;
pub mod train;

pub use model::{ArchConfig, Discriminator, Generator};
pub use train::{batch_from_dataset, train_translator, StepLosses, TranslatorRun, TranslatorTrainer};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::nn::losses::softmax_cross_entropy_mean;
use crate::nn::store_io;
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::Arr;

#[derive(Debug, thiserror::Error)]
pub enum TranslatorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("target domain {domain} out of range for {num_domains} domains")]
    DomainOutOfRange { domain: usize, num_domains: usize },
    #[error("non-finite loss at iteration {iteration}: {losses:?}")]
    NonFinite { iteration: usize, losses: StepLosses },
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] store_io::CheckpointError),
    #[error("io error: {0}")]
    Io(String),
}

/// Training hyperparameters for the translator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lambda_cls: f64,
    pub lambda_rec: f64,
    pub lambda_gp: f64,
    /// Discriminator updates per generator update.
    pub critic_steps: usize,
    /// Residual blocks in the generator.
    pub g_blocks: usize,
    pub g_base_channels: usize,
    /// Strided conv layers in the discriminator.
    pub d_repeat_num: usize,
    pub d_base_channels: usize,
    pub horizontal_flip: bool,
    pub seed: u64,
    /// Save a generator snapshot every this many iterations (0 = final only).
    pub checkpoint_every: usize,
}

impl TranslatorConfig {
    /// Colored MNIST profile: shallow generator, heavy reconstruction
    /// weight, short schedule, no flipping.
    pub fn colored_mnist() -> Self {
        TranslatorConfig {
            iterations: 5000,
            batch_size: 16,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda_cls: 1.0,
            lambda_rec: 500.0,
            lambda_gp: 10.0,
            critic_steps: 5,
            g_blocks: 3,
            g_base_channels: 64,
            d_repeat_num: 4,
            d_base_channels: 64,
            horizontal_flip: false,
            seed: 0,
            checkpoint_every: 250,
        }
    }

    /// Corrupted CIFAR-10 profile: deeper generator and discriminator.
    pub fn corrupted_cifar10() -> Self {
        TranslatorConfig {
            iterations: 20000,
            batch_size: 16,
            lr_g: 1e-4,
            lr_d: 1e-4,
            lambda_cls: 1.0,
            lambda_rec: 10.0,
            lambda_gp: 10.0,
            critic_steps: 5,
            g_blocks: 6,
            g_base_channels: 64,
            d_repeat_num: 5,
            d_base_channels: 64,
            horizontal_flip: true,
            seed: 0,
            checkpoint_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), TranslatorError> {
        if self.batch_size == 0 || self.critic_steps == 0 {
            return Err(TranslatorError::Config(
                "batch_size and critic_steps must be positive".into(),
            ));
        }
        for (name, v) in [
            ("lambda_cls", self.lambda_cls),
            ("lambda_rec", self.lambda_rec),
            ("lambda_gp", self.lambda_gp),
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(TranslatorError::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn arch(&self, image_size: usize, num_domains: usize) -> ArchConfig {
        ArchConfig {
            image_size,
            num_domains,
            g_base_channels: self.g_base_channels,
            g_blocks: self.g_blocks,
            d_repeat_num: self.d_repeat_num,
            d_base_channels: self.d_base_channels,
        }
    }
}

/// Generator + discriminator, each with its own parameter store so the
/// two optimizers stay independent.
pub struct TranslationModel<S: Scalar> {
    pub g_store: ParamStore<S>,
    pub d_store: ParamStore<S>,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub arch: ArchConfig,
}

impl<S: Scalar> TranslationModel<S> {
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self, TranslatorError> {
        arch.validate().map_err(TranslatorError::Config)?;
        let mut g_store = ParamStore::new();
        let mut d_store = ParamStore::new();
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::MODEL_INIT]);
        let generator = Generator::new(&mut g_store, &mut rng, &arch);
        let discriminator = Discriminator::new(&mut d_store, &mut rng, &arch);
        Ok(TranslationModel { g_store, d_store, generator, discriminator, arch })
    }

    pub fn num_domains(&self) -> usize {
        self.arch.num_domains
    }

    /// Save weights plus a JSON meta blob into a single file.
    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<(), TranslatorError> {
        let tensors: Vec<(String, &Arr<S>)> = self
            .g_store
            .iter()
            .chain(self.d_store.iter())
            .map(|(n, v)| (n.to_string(), v))
            .collect();
        let full_meta = serde_json::json!({ "arch": self.arch, "extra": meta });
        store_io::save_tensors(path, &tensors, full_meta)?;
        Ok(())
    }

    /// Rebuild a model from a checkpoint written by [`TranslationModel::save`].
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), TranslatorError> {
        let (tensors, meta) = store_io::load_tensors::<S>(path)?;
        let arch: ArchConfig = serde_json::from_value(meta["arch"].clone())
            .map_err(|e| TranslatorError::Config(format!("bad checkpoint meta: {e}")))?;
        let mut model = Self::new(arch, 0)?;
        let mut by_name: std::collections::HashMap<String, Arr<S>> = tensors.into_iter().collect();
        let mut take_all = |store: &ParamStore<S>| -> Result<Vec<Arr<S>>, TranslatorError> {
            store
                .iter()
                .map(|(name, _)| {
                    by_name.remove(name).ok_or_else(|| {
                        TranslatorError::Config(format!("checkpoint missing tensor {name}"))
                    })
                })
                .collect()
        };
        let g_vals = take_all(&model.g_store)?;
        let d_vals = take_all(&model.d_store)?;
        model.g_store.load_values(g_vals);
        model.d_store.load_values(d_vals);
        Ok((model, meta["extra"].clone()))
    }
}

/// Translate a batch of images (in [-1,1], NCHW) to the target domains.
///
/// Deterministic: the generator has no sampling inside.
pub fn translate<S: Scalar>(
    model: &TranslationModel<S>,
    x: &Arr<S>,
    targets: &[usize],
) -> Result<Arr<S>, TranslatorError> {
    for &t in targets {
        if t >= model.num_domains() {
            return Err(TranslatorError::DomainOutOfRange {
                domain: t,
                num_domains: model.num_domains(),
            });
        }
    }
    let mut tape = Tape::new();
    let bound = model.g_store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = model.generator.forward(&mut tape, &bound, xv, targets);
    Ok(tape.value(y).clone())
}

/// Mean negative log-softmax probability of the target domains.
///
/// `domain_logits`: [n,K]; `targets`: one domain per row.
pub fn domain_classification_loss<S: Scalar>(
    domain_logits: &Arr<S>,
    targets: &[usize],
) -> Result<S, TranslatorError> {
    let shape = domain_logits.shape().to_vec();
    if shape.len() != 2 {
        return Err(TranslatorError::Config(format!("logits must be [n,K], got {shape:?}")));
    }
    if targets.len() != shape[0] {
        return Err(TranslatorError::Config(format!(
            "{} logit rows but {} targets",
            shape[0],
            targets.len()
        )));
    }
    for &t in targets {
        if t >= shape[1] {
            return Err(TranslatorError::DomainOutOfRange { domain: t, num_domains: shape[1] });
        }
    }
    let mut tape = Tape::new();
    let logits = tape.constant(domain_logits.clone());
    let loss = softmax_cross_entropy_mean(&mut tape, logits, targets);
    Ok(tape.scalar_value(loss))
}

/// Anything that can produce a bias-transformed view of a batch.
///
/// The trainer only depends on this interface, so a two-domain translator
/// (or the identity, for ablations) can substitute for the multi-domain
/// generator.
pub trait ViewTransform<S: Scalar> {
    fn num_domains(&self) -> usize;
    /// x: [n,3,h,w] in [-1,1] -> same-shape transformed batch.
    fn transform(&self, x: &Arr<S>, targets: &[usize]) -> Result<Arr<S>, TranslatorError>;
}

impl<S: Scalar> ViewTransform<S> for TranslationModel<S> {
    fn num_domains(&self) -> usize {
        self.arch.num_domains
    }

    fn transform(&self, x: &Arr<S>, targets: &[usize]) -> Result<Arr<S>, TranslatorError> {
        translate(self, x, targets)
    }
}

/// Pass-through transform (the `no_G` ablation).
pub struct IdentityTransform {
    pub num_domains: usize,
}

impl<S: Scalar> ViewTransform<S> for IdentityTransform {
    fn num_domains(&self) -> usize {
        self.num_domains
    }

    fn transform(&self, x: &Arr<S>, _targets: &[usize]) -> Result<Arr<S>, TranslatorError> {
        Ok(x.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn tiny_model() -> TranslationModel<f32> {
        TranslationModel::new(
            ArchConfig {
                image_size: 28,
                num_domains: 10,
                g_base_channels: 4,
                g_blocks: 1,
                d_repeat_num: 4,
                d_base_channels: 4,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn translate_checks_domain_range() {
        let model = tiny_model();
        let x = Arr::<f32>::zeros(IxDyn(&[1, 3, 28, 28]));
        assert!(matches!(
            translate(&model, &x, &[10]),
            Err(TranslatorError::DomainOutOfRange { .. })
        ));
    }

    #[test]
    fn translate_is_deterministic_and_range_preserving() {
        let model = tiny_model();
        let mut rng = crate::rng::stream(3, &[]);
        let x = Arr::<f32>::from_shape_fn(IxDyn(&[2, 3, 28, 28]), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let a = translate(&model, &x, &[3, 8]).unwrap();
        let b = translate(&model, &x, &[3, 8]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(a.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Arr::<f64>::zeros(IxDyn(&[4, 10]));
        let loss = domain_classification_loss(&logits, &[0, 1, 2, 3]).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_gives_identical_translate() {
        let model = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("translator.bin");
        model.save(&path, serde_json::json!({})).unwrap();
        let (loaded, _) = TranslationModel::<f32>::load(&path).unwrap();

        let mut rng = crate::rng::stream(4, &[]);
        let x = Arr::<f32>::from_shape_fn(IxDyn(&[2, 3, 28, 28]), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let a = translate(&model, &x, &[0, 9]).unwrap();
        let b = translate(&loaded, &x, &[0, 9]).unwrap();
        assert_eq!(a, b, "save/load must preserve translate outputs exactly");
    }
}
