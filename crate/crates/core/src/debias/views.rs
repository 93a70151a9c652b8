//! Bias-transformed view generation for the trainer.
//!
//! `translate` is deterministic, so for a fixed dataset there are only
//! K possible outputs per sample. [`TranslationCache`] precomputes all of
//! them once (stored 8-bit, like any dataset image), turning the per-step
//! generator forward into a table lookup. The live-generator path stays
//! available for datasets too large to cache.

use ndarray::IxDyn;

use super::DebiasError;
use crate::datasets::BiasedDataset;
use crate::imgproc::ImageU8;
use crate::scalar::Scalar;
use crate::translator::{translate, TranslationModel, ViewTransform};
use crate::Arr;

/// Precomputed `G(x_i, y')` for every sample and target domain.
pub struct TranslationCache {
    images: Vec<ImageU8>, // index = sample * k + domain
    k: usize,
    n: usize,
}

impl TranslationCache {
    /// Run the generator over the whole dataset for every target domain.
    pub fn build<S: Scalar>(
        model: &TranslationModel<S>,
        dataset: &BiasedDataset,
        batch: usize,
    ) -> Result<Self, DebiasError> {
        let k = model.num_domains();
        let n = dataset.len();
        let mut images = vec![ImageU8::new(1, 1, 1); n * k];
        for start in (0..n).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let (x, _) = crate::translator::batch_from_dataset::<S>(dataset, &idx, &[]);
            for domain in 0..k {
                let targets = vec![domain; idx.len()];
                let out = translate(model, &x, &targets)?;
                for (bi, &sample) in idx.iter().enumerate() {
                    images[sample * k + domain] = batch_row_to_u8(&out, bi);
                }
            }
        }
        Ok(TranslationCache { images, k, n })
    }

    pub fn num_domains(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Stored translation of sample `i` to `domain` (8-bit quantized).
    pub fn get(&self, sample: usize, domain: usize) -> &ImageU8 {
        &self.images[sample * self.k + domain]
    }
}

/// Convert one row of a [-1,1] NCHW batch back to an 8-bit HWC image.
fn batch_row_to_u8<S: Scalar>(batch: &Arr<S>, row: usize) -> ImageU8 {
    let shape = batch.shape();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut img = ImageU8::new(h, w, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = (batch[[row, ch, y, x]].as_f64() + 1.0) / 2.0;
                img.data[(y * w + x) * c + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    img
}

/// Where the trainer gets its bias-transformed views from.
pub enum ViewSource<S: Scalar> {
    /// Live generator (or substitute) forward.
    Live(Box<dyn ViewTransform<S>>),
    /// Precomputed translations, looked up by sample index.
    Cached(TranslationCache),
    /// Identity: the second view is the original image (`no_G` ablation).
    Identity { num_domains: usize },
}

impl<S: Scalar> ViewSource<S> {
    pub fn num_domains(&self) -> usize {
        match self {
            ViewSource::Live(t) => t.num_domains(),
            ViewSource::Cached(c) => c.num_domains(),
            ViewSource::Identity { num_domains } => *num_domains,
        }
    }

    /// Produce the transformed batch in [0,1] NCHW.
    ///
    /// `x01` is the original batch in [0,1]; `indices` are dataset indices
    /// (used by the cached source).
    pub fn views01(
        &self,
        x01: &Arr<S>,
        indices: &[usize],
        targets: &[usize],
    ) -> Result<Arr<S>, DebiasError> {
        match self {
            ViewSource::Identity { .. } => Ok(x01.clone()),
            ViewSource::Cached(cache) => {
                let shape = x01.shape();
                let (c, h, w) = (shape[1], shape[2], shape[3]);
                let mut out = Arr::<S>::zeros(IxDyn(shape));
                for (bi, (&si, &d)) in indices.iter().zip(targets).enumerate() {
                    let img = cache.get(si, d);
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                out[[bi, ch, y, xx]] =
                                    S::of(img.data[(y * w + xx) * c + ch] as f64 / 255.0);
                            }
                        }
                    }
                }
                Ok(out)
            }
            ViewSource::Live(t) => {
                let xm = x01.mapv(|v| v + v - S::one());
                let ym = t.transform(&xm, targets)?;
                Ok(ym.mapv(|v| (v + S::one()) / S::of(2.0)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::source::{synthetic_digits, SourceConfig};
    use crate::datasets::{build_colored_mnist, DatasetConfig};
    use crate::translator::ArchConfig;

    #[test]
    fn cache_matches_live_translation_up_to_quantization() {
        let src = synthetic_digits(SourceConfig::new(6, 2, 2, 3));
        let ds = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.0, 1))
            .unwrap()
            .train;
        let model = TranslationModel::<f32>::new(
            ArchConfig {
                image_size: 28,
                num_domains: 10,
                g_base_channels: 4,
                g_blocks: 1,
                d_repeat_num: 4,
                d_base_channels: 4,
            },
            3,
        )
        .unwrap();
        let cache = TranslationCache::build(&model, &ds, 4).unwrap();

        let idx = [1usize, 4];
        let targets = [7usize, 2];
        let (xm, _) = crate::translator::batch_from_dataset::<f32>(&ds, &idx, &[]);
        let live = translate(&model, &xm, &targets).unwrap();
        for (bi, (&si, &d)) in idx.iter().zip(&targets).enumerate() {
            let cached = cache.get(si, d);
            for ch in 0..3 {
                for y in 0..28 {
                    for x in 0..28 {
                        let lv = (live[[bi, ch, y, x]] as f64 + 1.0) / 2.0;
                        let cv = cached.data[(y * 28 + x) * 3 + ch] as f64 / 255.0;
                        assert!(
                            (lv - cv).abs() <= 0.5 / 255.0 + 1e-6,
                            "cache deviates beyond quantization at {bi},{ch},{y},{x}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn identity_source_returns_input() {
        let x = Arr::<f32>::from_shape_fn(IxDyn(&[2, 3, 4, 4]), |ix| ix[3] as f32 / 4.0);
        let src = ViewSource::<f32>::Identity { num_domains: 10 };
        let out = src.views01(&x, &[0, 1], &[3, 4]).unwrap();
        assert_eq!(out, x);
    }
}
