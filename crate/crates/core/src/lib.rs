//! Debiased representation learning via generative bias-transformation.
//!
//! The pipeline, end to end:
//!
//! 1. [`datasets`] synthesizes controllably biased image-classification
//!    benchmarks (Colored MNIST, Corrupted CIFAR-10) with an exact
//!    bias-free ratio and a portable on-disk format.
//! 2. [`translator`] trains a multi-domain image translation model on the
//!    biased data. Because the domain classifier absorbs the bias shortcut,
//!    the generator learns to rewrite the bias attribute of an image while
//!    mostly preserving the task signal.
//! 3. [`debias`] runs the contrastive debiasing trainer: every step it
//!    pairs each image with a bias-transformed view from the frozen
//!    generator, applies stochastic augmentations, and minimizes
//!    cross entropy on both views plus a temperature-scaled contrastive
//!    loss that ties the pair together.
//! 4. [`diagnostics`] probes what the generator actually learned with
//!    oracle bias/signal classifiers, and renders transformation grids.
//! 5. [`eval`] turns per-epoch metrics into best/last accuracy tables
//!    aggregated over seeds.
//!
//! All numerics are generic over a [`Scalar`] (`f32` for training, `f64`
//! for finite-difference verification); see the aliases below.

pub mod autodiff;
pub mod datasets;
pub mod debias;
pub mod diagnostics;
pub mod eval;
pub mod imgproc;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod translator;
pub mod util;

pub use scalar::Scalar;

/// Dynamic-dimension tensor storage used throughout the crate.
pub type Arr<S> = ndarray::ArrayD<S>;

/// Training-precision tensor.
pub type Arr32 = Arr<f32>;
/// Verification-precision tensor (finite-difference oracles run in `f64`).
pub type Arr64 = Arr<f64>;

/// Training-precision autodiff tape.
pub type Tape32 = autodiff::Tape<f32>;
/// Verification-precision autodiff tape.
pub type Tape64 = autodiff::Tape<f64>;
