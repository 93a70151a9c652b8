//! Biased benchmark synthesis with exact bias-free ratios.
//!
//! A dataset couples each image with a task label `y`, a hidden bias label
//! `y_b` (palette color index or corruption index) and a `bias_free` flag.
//! In the train split the bias is aligned with the class except for exactly
//! `round(ratio * n)` samples, whose bias is drawn from the non-aligned
//! modes. Unbiased splits draw the bias uniformly, independent of the
//! class. The whole construction is a pure function of
//! (source, [`DatasetConfig`]): rebuilding is bit-identical.

mod colored_mnist;
mod corrupted_cifar10;
pub mod corruptions;
pub mod io;
pub mod source;
mod stats;

pub use colored_mnist::{build_colored_mnist, decode_palette_color};
pub use corrupted_cifar10::build_corrupted_cifar10;
pub use corruptions::{apply_corruption, Corruption, CORRUPTION_ORDER};
pub use io::{read_dataset, write_dataset};
pub use stats::per_class_uniformity_ok;

use serde::{Deserialize, Serialize};

use crate::imgproc::ImageU8;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown corruption name: {0}")]
    UnknownCorruption(String),
    #[error("dataset io error: {0}")]
    Io(String),
    #[error("missing image file: {0}")]
    MissingImage(String),
    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    ChecksumMismatch { path: String, expected: String, actual: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    ColoredMnist,
    CorruptedCifar10,
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetName::ColoredMnist => write!(f, "colored_mnist"),
            DatasetName::CorruptedCifar10 => write!(f, "corrupted_cifar10"),
        }
    }
}

impl std::str::FromStr for DatasetName {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "colored_mnist" => Ok(DatasetName::ColoredMnist),
            "corrupted_cifar10" => Ok(DatasetName::CorruptedCifar10),
            other => Err(DatasetError::Config(format!("unknown dataset name: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    UnbiasedTest,
    UnbiasedTrain,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::UnbiasedTest => "unbiased_test",
            Split::UnbiasedTrain => "unbiased_train",
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Split::Train => 100,
            Split::UnbiasedTest => 101,
            Split::UnbiasedTrain => 102,
        }
    }
}

/// 10 maximally separated palette colors: hues evenly spaced around the
/// wheel at full saturation and value.
pub fn default_palette() -> Vec<[f32; 3]> {
    (0..10)
        .map(|k| {
            let (r, g, b) = crate::imgproc::hsv_to_rgb(k as f32 / 10.0, 1.0, 1.0);
            [r, g, b]
        })
        .collect()
}

/// The canonical bias-free ratio grid used in reporting.
pub const CANONICAL_RATIOS: [f64; 5] = [0.0, 0.005, 0.01, 0.02, 0.05];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: DatasetName,
    /// Fraction of bias-free samples in the train split.
    pub ratio: f64,
    pub seed: u64,
    /// Corruption strength 1..=5 (corrupted_cifar10 only).
    pub severity: u8,
    /// Class color table (colored_mnist only).
    pub palette: Vec<[f32; 3]>,
    /// Gaussian per-channel color jitter applied to the palette color of
    /// each sample (colored_mnist only); 0 disables.
    pub color_jitter_sigma: f32,
}

impl DatasetConfig {
    pub fn colored_mnist(ratio: f64, seed: u64) -> Self {
        DatasetConfig {
            name: DatasetName::ColoredMnist,
            ratio,
            seed,
            severity: 0,
            palette: default_palette(),
            color_jitter_sigma: 0.05,
        }
    }

    pub fn corrupted_cifar10(ratio: f64, seed: u64) -> Self {
        DatasetConfig {
            name: DatasetName::CorruptedCifar10,
            ratio,
            seed,
            severity: 4,
            palette: Vec::new(),
            color_jitter_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.ratio) || !self.ratio.is_finite() {
            return Err(DatasetError::Config(format!("ratio {} outside [0,1]", self.ratio)));
        }
        match self.name {
            DatasetName::ColoredMnist => {
                for i in 0..self.palette.len() {
                    for j in (i + 1)..self.palette.len() {
                        if self.palette[i] == self.palette[j] {
                            return Err(DatasetError::Config(format!(
                                "palette colors {i} and {j} are identical"
                            )));
                        }
                    }
                }
            }
            DatasetName::CorruptedCifar10 => {
                if !(1..=5).contains(&self.severity) {
                    return Err(DatasetError::Config(format!(
                        "severity {} outside 1..=5",
                        self.severity
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hash of the full config (used in provenance sidecars).
    pub fn hash(&self) -> String {
        crate::util::hash::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())
    }
}

/// One labeled image with its hidden bias annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageU8,
    pub class_label: usize,
    pub bias_label: usize,
    pub bias_free: bool,
}

/// A fully materialized split of a biased benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset {
    pub config: DatasetConfig,
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl BiasedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        match self.config.name {
            DatasetName::ColoredMnist => self.config.palette.len(),
            DatasetName::CorruptedCifar10 => CORRUPTION_ORDER.len(),
        }
    }

    pub fn bias_free_count(&self) -> usize {
        self.samples.iter().filter(|s| s.bias_free).count()
    }

    /// Drop every bias-free sample; reproduces the alternative 0%-ratio
    /// construction (deleting conflicting samples from a small-ratio set).
    pub fn exclude_bias_free(&self) -> BiasedDataset {
        BiasedDataset {
            config: self.config.clone(),
            split: self.split,
            samples: self.samples.iter().filter(|s| !s.bias_free).cloned().collect(),
        }
    }
}

/// The three splits produced by a builder in one pass.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub train: BiasedDataset,
    pub unbiased_test: BiasedDataset,
    pub unbiased_train: BiasedDataset,
}

/// Number of bias-free samples implied by a ratio (round-half-away).
pub fn bias_free_target(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

/// Choose which train indices are bias-free: a seeded shuffle, first
/// `round(ratio*n)` win.
pub(crate) fn choose_bias_free_indices(n: usize, ratio: f64, seed: u64, split: Split) -> Vec<bool> {
    use rand::seq::SliceRandom;
    let target = bias_free_target(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(seed, &[crate::rng::tag::DATASET_FLAGS, split.tag()]);
    order.shuffle(&mut rng);
    let mut flags = vec![false; n];
    for &i in order.iter().take(target) {
        flags[i] = true;
    }
    flags
}

/// Uniform draw over the K-1 bias modes that conflict with `class`.
pub(crate) fn draw_conflicting_mode(rng: &mut impl rand::Rng, class: usize, k: usize) -> usize {
    let r = rng.gen_range(0..k - 1);
    if r >= class {
        r + 1
    } else {
        r
    }
}

pub(crate) fn per_sample_rng(seed: u64, split: Split, purpose: u64, index: usize) -> rand_chacha::ChaCha12Rng {
    crate::rng::stream(seed, &[purpose, split.tag(), index as u64])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_targets_match_arithmetic() {
        assert_eq!(bias_free_target(60000, 0.005), 300);
        assert_eq!(bias_free_target(60000, 0.0), 0);
        assert_eq!(bias_free_target(50000, 0.02), 1000);
        assert_eq!(bias_free_target(1000, 0.005), 5);
    }

    #[test]
    fn canonical_ratio_grid_is_accepted() {
        for &r in &CANONICAL_RATIOS {
            DatasetConfig::colored_mnist(r, 0).validate().unwrap();
        }
    }

    #[test]
    fn palette_is_pairwise_distinct() {
        DatasetConfig::colored_mnist(0.0, 0).validate().unwrap();
    }

    #[test]
    fn duplicate_palette_rejected() {
        let mut cfg = DatasetConfig::colored_mnist(0.0, 0);
        cfg.palette[3] = cfg.palette[7];
        assert!(matches!(cfg.validate(), Err(DatasetError::Config(_))));
    }

    #[test]
    fn out_of_range_ratio_rejected() {
        let cfg = DatasetConfig::colored_mnist(1.5, 0);
        assert!(matches!(cfg.validate(), Err(DatasetError::Config(_))));
    }

    #[test]
    fn conflicting_mode_never_hits_class() {
        let mut rng = crate::rng::stream(1, &[]);
        for _ in 0..1000 {
            let m = draw_conflicting_mode(&mut rng, 4, 10);
            assert!(m < 10 && m != 4);
        }
    }
}
