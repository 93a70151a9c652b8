//! Stochastic view augmentations: random resized crop, horizontal flip,
//! random color distortion. Two independent draws per step form the view
//! family of the contrastive objective.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::imgproc::{self, ImageF32};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropPolicy {
    /// Area fraction range of the random resized crop.
    pub scale: (f32, f32),
    /// Output side length after resizing.
    pub output: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipPolicy {
    pub enabled: bool,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorDistortionPolicy {
    /// SimCLR-style jitter strength s: brightness/contrast/saturation
    /// factors in [1 - 0.8s, 1 + 0.8s], hue shift in [-0.2s, 0.2s].
    pub strength: f32,
    /// Probability of applying the jitter at all.
    pub apply_p: f64,
    /// Probability of converting to grayscale (0 disables).
    pub grayscale_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub crop: CropPolicy,
    pub horizontal_flip: FlipPolicy,
    pub color_distortion: ColorDistortionPolicy,
}

impl AugmentationPolicy {
    /// No flipping (digits are not mirror-invariant), no grayscale (it
    /// would erase the color bias axis and trivialize the benchmark).
    pub fn colored_mnist() -> Self {
        AugmentationPolicy {
            crop: CropPolicy { scale: (0.6, 1.0), output: 28 },
            horizontal_flip: FlipPolicy { enabled: false, p: 0.5 },
            color_distortion: ColorDistortionPolicy { strength: 0.5, apply_p: 0.8, grayscale_p: 0.0 },
        }
    }

    pub fn corrupted_cifar10() -> Self {
        AugmentationPolicy {
            crop: CropPolicy { scale: (0.2, 1.0), output: 32 },
            horizontal_flip: FlipPolicy { enabled: true, p: 0.5 },
            color_distortion: ColorDistortionPolicy { strength: 0.5, apply_p: 0.8, grayscale_p: 0.2 },
        }
    }

    /// Exact pass-through (used by ablation-collapse checks).
    pub fn identity(output: usize) -> Self {
        AugmentationPolicy {
            crop: CropPolicy { scale: (1.0, 1.0), output },
            horizontal_flip: FlipPolicy { enabled: false, p: 0.0 },
            color_distortion: ColorDistortionPolicy { strength: 0.0, apply_p: 0.0, grayscale_p: 0.0 },
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop.scale == (1.0, 1.0)
            && !self.horizontal_flip.enabled
            && self.color_distortion.apply_p == 0.0
            && self.color_distortion.grayscale_p == 0.0
    }
}

/// One stochastic draw from the augmentation family.
pub fn augment(x: &ImageF32, policy: &AugmentationPolicy, rng: &mut impl Rng) -> ImageF32 {
    let mut img = random_resized_crop(x, &policy.crop, rng);
    if policy.horizontal_flip.enabled && rng.gen_bool(policy.horizontal_flip.p) {
        img = imgproc::hflip(&img);
    }
    let cd = &policy.color_distortion;
    if cd.apply_p > 0.0 && rng.gen_bool(cd.apply_p) {
        img = color_jitter(&img, cd.strength, rng);
    }
    if cd.grayscale_p > 0.0 && rng.gen_bool(cd.grayscale_p) {
        img = to_grayscale(&img);
    }
    img.clamp01();
    img
}

fn random_resized_crop(x: &ImageF32, policy: &CropPolicy, rng: &mut impl Rng) -> ImageF32 {
    let area = (x.h * x.w) as f32;
    // identity fast-path keeps degenerate policies bit-exact
    if policy.scale == (1.0, 1.0) && policy.output == x.h && policy.output == x.w {
        return x.clone();
    }
    for _ in 0..10 {
        let target = area * rng.gen_range(policy.scale.0..=policy.scale.1);
        let log_ratio = rng.gen_range((3f32 / 4.0).ln()..=(4f32 / 3.0).ln());
        let ratio = log_ratio.exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w >= 1 && h >= 1 && w <= x.w && h <= x.h {
            let top = rng.gen_range(0..=(x.h - h));
            let left = rng.gen_range(0..=(x.w - w));
            let patch = imgproc::crop(x, top, left, h, w);
            return imgproc::resize_bilinear(&patch, policy.output, policy.output);
        }
    }
    // fallback: full center crop
    imgproc::resize_bilinear(x, policy.output, policy.output)
}

fn color_jitter(x: &ImageF32, strength: f32, rng: &mut impl Rng) -> ImageF32 {
    let b = 0.8 * strength;
    let hue_range = 0.2 * strength;
    let mut order = [0usize, 1, 2, 3];
    order.shuffle(rng);
    // draw all factors up front so the draw count is order-independent
    let brightness = rng.gen_range((1.0 - b).max(0.0)..=1.0 + b);
    let contrast = rng.gen_range((1.0 - b).max(0.0)..=1.0 + b);
    let saturation = rng.gen_range((1.0 - b).max(0.0)..=1.0 + b);
    let hue = rng.gen_range(-hue_range..=hue_range);

    let mut img = x.clone();
    for op in order {
        img = match op {
            0 => scale_pixels(&img, brightness),
            1 => blend_with_mean_gray(&img, contrast),
            2 => blend_with_pixel_gray(&img, saturation),
            _ => imgproc::map_hsv(&img, |h, s, v| ((h + hue).rem_euclid(1.0), s, v)),
        };
        img.clamp01();
    }
    img
}

fn scale_pixels(x: &ImageF32, f: f32) -> ImageF32 {
    let mut out = x.clone();
    for v in &mut out.data {
        *v *= f;
    }
    out
}

fn blend_with_mean_gray(x: &ImageF32, f: f32) -> ImageF32 {
    let mut mean = 0.0f32;
    for px in x.data.chunks_exact(3) {
        mean += imgproc::luma(px[0], px[1], px[2]);
    }
    mean /= (x.h * x.w) as f32;
    let mut out = x.clone();
    for v in &mut out.data {
        *v = mean + (*v - mean) * f;
    }
    out
}

fn blend_with_pixel_gray(x: &ImageF32, f: f32) -> ImageF32 {
    let mut out = x.clone();
    for px in out.data.chunks_exact_mut(3) {
        let g = imgproc::luma(px[0], px[1], px[2]);
        for v in px {
            *v = g + (*v - g) * f;
        }
    }
    out
}

fn to_grayscale(x: &ImageF32) -> ImageF32 {
    let mut out = x.clone();
    for px in out.data.chunks_exact_mut(3) {
        let g = imgproc::luma(px[0], px[1], px[2]);
        px.fill(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn probe(seed: u64) -> ImageF32 {
        let mut rng = stream(seed, &[]);
        ImageF32::from_fn(28, 28, 3, |_, _, _| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn identity_policy_is_exact_identity() {
        let x = probe(1);
        let out = augment(&x, &AugmentationPolicy::identity(28), &mut stream(2, &[]));
        assert_eq!(x.data, out.data);
    }

    #[test]
    fn same_rng_state_gives_identical_outputs() {
        let x = probe(3);
        let policy = AugmentationPolicy::colored_mnist();
        let a = augment(&x, &policy, &mut stream(5, &[7]));
        let b = augment(&x, &policy, &mut stream(5, &[7]));
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn output_size_follows_policy() {
        let x = probe(4);
        let mut policy = AugmentationPolicy::corrupted_cifar10();
        policy.crop.output = 20;
        let out = augment(&x, &policy, &mut stream(6, &[]));
        assert_eq!((out.h, out.w), (20, 20));
    }

    #[test]
    fn colored_mnist_policy_disables_flip_and_grayscale() {
        let p = AugmentationPolicy::colored_mnist();
        assert!(!p.horizontal_flip.enabled);
        assert_eq!(p.color_distortion.grayscale_p, 0.0);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let x = probe(5);
        let policy = AugmentationPolicy::corrupted_cifar10();
        for i in 0..50 {
            let out = augment(&x, &policy, &mut stream(100 + i, &[]));
            assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
