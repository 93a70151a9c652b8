//! Statistical independence check for unbiased splits.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::BiasedDataset;

/// Per-class chi-square test of bias-mode uniformity.
///
/// For each class, the empirical distribution of bias labels is tested
/// against uniform; returns true when no class rejects uniformity at the
/// given significance level.
pub fn per_class_uniformity_ok(dataset: &BiasedDataset, significance: f64) -> bool {
    let k = dataset.num_classes();
    let mut counts = vec![vec![0usize; k]; k];
    for s in &dataset.samples {
        counts[s.class_label][s.bias_label] += 1;
    }
    let dist = ChiSquared::new((k - 1) as f64).expect("valid dof");
    let critical = dist.inverse_cdf(1.0 - significance);
    for class_counts in &counts {
        let n: usize = class_counts.iter().sum();
        if n == 0 {
            continue;
        }
        let expected = n as f64 / k as f64;
        let stat: f64 = class_counts
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        if stat >= critical {
            return false;
        }
    }
    true
}
