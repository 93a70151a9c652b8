//! Corrupted CIFAR-10 synthesis: the applied corruption type is the bias.

use rand::Rng;

use super::source::SourceBundle;
use super::{
    choose_bias_free_indices, draw_conflicting_mode, per_sample_rng, BiasedDataset, DatasetBundle,
    DatasetConfig, DatasetError, DatasetName, Sample, Split, CORRUPTION_ORDER,
};
use crate::rng::tag;

/// Build the three corrupted CIFAR-10 splits from a 10-class RGB source.
///
/// Class k maps to `CORRUPTION_ORDER[k]`; bias-aligned samples receive
/// their class corruption at `config.severity`, bias-free samples a
/// uniformly drawn non-aligned corruption.
pub fn build_corrupted_cifar10(
    source: &SourceBundle,
    config: &DatasetConfig,
) -> Result<DatasetBundle, DatasetError> {
    if config.name != DatasetName::CorruptedCifar10 {
        return Err(DatasetError::Config(format!(
            "build_corrupted_cifar10 got config for {}",
            config.name
        )));
    }
    config.validate()?;
    let k = source.train.num_classes;
    if k != CORRUPTION_ORDER.len() {
        return Err(DatasetError::Config(format!(
            "source has {k} classes; the corruption benchmark needs exactly {}",
            CORRUPTION_ORDER.len()
        )));
    }
    for set in [&source.train, &source.test, &source.extra] {
        if set.images.iter().any(|i| i.c != 3) {
            return Err(DatasetError::Config("source images must be RGB".into()));
        }
    }

    Ok(DatasetBundle {
        train: corrupt_split(source, config, Split::Train)?,
        unbiased_test: corrupt_split(source, config, Split::UnbiasedTest)?,
        unbiased_train: corrupt_split(source, config, Split::UnbiasedTrain)?,
    })
}

fn corrupt_split(
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
        _ => Vec::new(),
    };

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let y = set.labels[i];
        let mut mode_rng = per_sample_rng(config.seed, split, tag::DATASET_COLOR, i);
        let bias_label = match split {
            Split::Train => {
                if bias_free_flags[i] {
                    draw_conflicting_mode(&mut mode_rng, y, k)
                } else {
                    y
                }
            }
            _ => mode_rng.gen_range(0..k),
        };
        let corruption_seed = per_sample_rng(config.seed, split, tag::CORRUPTION, i).gen::<u64>();
        let corrupted = super::apply_corruption(
            &set.images[i].to_f32(),
            CORRUPTION_ORDER[bias_label],
            config.severity,
            corruption_seed,
        )?;
        samples.push(Sample {
            image: corrupted.to_u8(),
            class_label: y,
            bias_label,
            bias_free: bias_label != y,
        });
    }

    Ok(BiasedDataset { config: config.clone(), split, samples })
}

#[cfg(test)]
mod tests {
    use super::super::source::{synthetic_objects, SourceConfig};
    use super::super::{bias_free_target, DatasetConfig};
    use super::*;

    fn small_source() -> SourceBundle {
        synthetic_objects(SourceConfig::new(300, 60, 60, 13))
    }

    #[test]
    fn class_zero_aligned_means_snow() {
        let src = small_source();
        let cfg = DatasetConfig::corrupted_cifar10(0.0, 3);
        let bundle = build_corrupted_cifar10(&src, &cfg).unwrap();
        for s in &bundle.train.samples {
            assert_eq!(s.bias_label, s.class_label);
            if s.class_label == 0 {
                assert_eq!(CORRUPTION_ORDER[s.bias_label], super::super::Corruption::Snow);
            }
        }
    }

    #[test]
    fn ratio_bookkeeping_matches_colored_mnist() {
        let src = small_source();
        let cfg = DatasetConfig::corrupted_cifar10(0.02, 3);
        let bundle = build_corrupted_cifar10(&src, &cfg).unwrap();
        assert_eq!(bundle.train.bias_free_count(), bias_free_target(300, 0.02));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let src = small_source();
        let cfg = DatasetConfig::corrupted_cifar10(0.05, 8);
        let a = build_corrupted_cifar10(&src, &cfg).unwrap();
        let b = build_corrupted_cifar10(&src, &cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.unbiased_test, b.unbiased_test);
    }

    #[test]
    fn wrong_class_count_is_config_error() {
        let mut src = small_source();
        src.train.num_classes = 7;
        let cfg = DatasetConfig::corrupted_cifar10(0.0, 3);
        assert!(matches!(
            build_corrupted_cifar10(&src, &cfg),
            Err(DatasetError::Config(_))
        ));
    }
}
