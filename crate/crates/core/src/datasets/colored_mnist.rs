//! Colored MNIST synthesis: digit color is the bias attribute.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::source::SourceBundle;
use super::{
    choose_bias_free_indices, draw_conflicting_mode, per_sample_rng, BiasedDataset, DatasetBundle,
    DatasetConfig, DatasetError, DatasetName, Sample, Split,
};
use crate::imgproc::ImageU8;
use crate::rng::tag;

/// Build the three Colored MNIST splits from grayscale digit sources.
///
/// Bias-aligned samples are tinted with `palette[class]` (plus bounded
/// per-sample jitter); bias-free samples draw uniformly from the other
/// K-1 palette entries. Unbiased splits draw the color uniformly over all
/// K entries, independent of the digit.
pub fn build_colored_mnist(
    source: &SourceBundle,
    config: &DatasetConfig,
) -> Result<DatasetBundle, DatasetError> {
    if config.name != DatasetName::ColoredMnist {
        return Err(DatasetError::Config(format!(
            "build_colored_mnist got config for {}",
            config.name
        )));
    }
    config.validate()?;
    let k = source.train.num_classes;
    if config.palette.len() != k {
        return Err(DatasetError::Config(format!(
            "palette has {} colors but source has {k} classes",
            config.palette.len()
        )));
    }
    for set in [&source.train, &source.test, &source.extra] {
        if set.images.iter().any(|i| i.c != 1) {
            return Err(DatasetError::Config("source images must be grayscale".into()));
        }
    }

    Ok(DatasetBundle {
        train: colorize_split(source, config, Split::Train)?,
        unbiased_test: colorize_split(source, config, Split::UnbiasedTest)?,
        unbiased_train: colorize_split(source, config, Split::UnbiasedTrain)?,
    })
}

fn colorize_split(
    source: &SourceBundle,
    config: &DatasetConfig,
    split: Split,
) -> Result<BiasedDataset, DatasetError> {
    let set = match split {
        Split::Train => &source.train,
        Split::UnbiasedTest => &source.test,
        Split::UnbiasedTrain => &source.extra,
    };
    let k = set.num_classes;
    let n = set.len();

    let bias_free_flags = match split {
        Split::Train => choose_bias_free_indices(n, config.ratio, config.seed, split),
        _ => Vec::new(), // unbiased splits pick colors uniformly instead
    };

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let y = set.labels[i];
        let mut color_rng = per_sample_rng(config.seed, split, tag::DATASET_COLOR, i);
        let bias_label = match split {
            Split::Train => {
                if bias_free_flags[i] {
                    draw_conflicting_mode(&mut color_rng, y, k)
                } else {
                    y
                }
            }
            _ => color_rng.gen_range(0..k),
        };
        let mut jitter_rng = per_sample_rng(config.seed, split, tag::DATASET_JITTER, i);
        let color = jittered_color(config.palette[bias_label], config.color_jitter_sigma, &mut jitter_rng);
        let image = tint(&set.images[i], color);
        samples.push(Sample {
            image,
            class_label: y,
            bias_label,
            bias_free: bias_label != y,
        });
    }

    Ok(BiasedDataset { config: config.clone(), split, samples })
}

fn jittered_color(base: [f32; 3], sigma: f32, rng: &mut impl Rng) -> [f32; 3] {
    if sigma <= 0.0 {
        return base;
    }
    let dist = Normal::new(0.0f32, sigma).unwrap();
    let mut out = base;
    for v in &mut out {
        *v = (*v + dist.sample(rng)).clamp(0.0, 1.0);
    }
    out
}

/// Tint the digit foreground: gray intensity scales the color, background
/// stays black.
fn tint(gray: &ImageU8, color: [f32; 3]) -> ImageU8 {
    let mut out = ImageU8::new(gray.h, gray.w, 3);
    for y in 0..gray.h {
        for x in 0..gray.w {
            let g = gray.get(y, x, 0) as f32 / 255.0;
            for ch in 0..3 {
                out.data[(y * gray.w + x) * 3 + ch] = (g * color[ch] * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Recover the palette index of a colorized digit from the mean foreground
/// pixel, by cosine similarity (invariant to intensity scaling).
pub fn decode_palette_color(image: &ImageU8, palette: &[[f32; 3]]) -> Option<usize> {
    assert_eq!(image.c, 3, "decode expects RGB");
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for px in image.data.chunks_exact(3) {
        if px.iter().any(|&v| v > 0) {
            for ch in 0..3 {
                sum[ch] += px[ch] as f64 / 255.0;
            }
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (idx, c) in palette.iter().enumerate() {
        let cn = (c.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()).sqrt();
        if cn == 0.0 {
            continue;
        }
        let dot: f64 = (0..3).map(|i| sum[i] * c[i] as f64).sum();
        let sim = dot / (norm * cn);
        if sim > best_sim {
            best_sim = sim;
            best = idx;
        }
    }
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::super::source::{synthetic_digits, SourceConfig};
    use super::super::{bias_free_target, per_class_uniformity_ok, DatasetConfig};
    use super::*;

    fn small_source() -> SourceBundle {
        synthetic_digits(SourceConfig::new(400, 200, 100, 77))
    }

    #[test]
    fn ratio_zero_forces_alignment() {
        let src = small_source();
        let cfg = DatasetConfig::colored_mnist(0.0, 5);
        let bundle = build_colored_mnist(&src, &cfg).unwrap();
        assert_eq!(bundle.train.bias_free_count(), 0);
        for s in &bundle.train.samples {
            assert_eq!(s.bias_label, s.class_label);
            assert!(!s.bias_free);
        }
    }

    #[test]
    fn bias_free_count_is_exact() {
        let src = small_source();
        for &ratio in &[0.005, 0.01, 0.02, 0.05, 0.13] {
            let cfg = DatasetConfig::colored_mnist(ratio, 5);
            let bundle = build_colored_mnist(&src, &cfg).unwrap();
            assert_eq!(bundle.train.bias_free_count(), bias_free_target(400, ratio));
        }
    }

    #[test]
    fn bias_free_samples_conflict_strictly() {
        let src = small_source();
        let cfg = DatasetConfig::colored_mnist(0.1, 5);
        let bundle = build_colored_mnist(&src, &cfg).unwrap();
        for s in &bundle.train.samples {
            assert_eq!(s.bias_free, s.bias_label != s.class_label);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let src = small_source();
        let cfg = DatasetConfig::colored_mnist(0.02, 9);
        let a = build_colored_mnist(&src, &cfg).unwrap();
        let b = build_colored_mnist(&src, &cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.unbiased_test, b.unbiased_test);
        assert_eq!(a.unbiased_train, b.unbiased_train);
    }

    #[test]
    fn different_seed_changes_dataset() {
        let src = small_source();
        let a = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.02, 9)).unwrap();
        let b = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.02, 10)).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn palette_size_mismatch_is_config_error() {
        let src = small_source();
        let mut cfg = DatasetConfig::colored_mnist(0.0, 5);
        cfg.palette.pop();
        assert!(matches!(build_colored_mnist(&src, &cfg), Err(DatasetError::Config(_))));
    }

    #[test]
    fn zero_jitter_decode_recovers_bias_label_exactly() {
        let src = small_source();
        let mut cfg = DatasetConfig::colored_mnist(0.05, 5);
        cfg.color_jitter_sigma = 0.0;
        let bundle = build_colored_mnist(&src, &cfg).unwrap();
        for s in &bundle.train.samples {
            let decoded = decode_palette_color(&s.image, &cfg.palette).unwrap();
            assert_eq!(decoded, s.bias_label);
        }
    }

    #[test]
    fn unbiased_test_is_class_independent() {
        let src = synthetic_digits(SourceConfig::new(100, 12000, 100, 3));
        let cfg = DatasetConfig::colored_mnist(0.0, 5);
        let bundle = build_colored_mnist(&src, &cfg).unwrap();
        assert!(per_class_uniformity_ok(&bundle.unbiased_test, 0.01));
    }
}
