//! Oracle probe classifiers, trained only on unbiased splits so they
//! measure one attribute (bias mode or task signal) without shortcut
//! contamination.

use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::autodiff::Tape;
use crate::datasets::{BiasedDataset, Split};
use crate::debias::{DebiasModel, EncoderArch, EncoderKind};
use crate::nn::adam::Adam;
use crate::nn::losses::softmax_cross_entropy_rows;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::Arr;

/// Which attribute the oracle predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Predict the bias mode (color / corruption index).
    Bias,
    /// Predict the task class.
    Signal,
}

impl std::str::FromStr for LabelKind {
    type Err = DiagnosticsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias" => Ok(LabelKind::Bias),
            "signal" => Ok(LabelKind::Signal),
            other => Err(DiagnosticsError::Config(format!("unknown label kind: {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub encoder: EncoderKind,
    /// Label-smoothing weight. Probes score generated (off-manifold)
    /// images, so they are trained calibrated: an uninformative input
    /// should score near the ln K chance ceiling, not above it.
    pub label_smoothing: f64,
}

impl OracleConfig {
    pub fn colored_mnist() -> Self {
        OracleConfig {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            seed: 0,
            encoder: EncoderKind::Mlp,
            label_smoothing: 0.1,
        }
    }
}

/// A trained probe plus its provenance.
pub struct OracleClassifier<S: Scalar> {
    pub model: DebiasModel<S>,
    pub label_kind: LabelKind,
    pub held_out_acc: f64,
    /// Config hash of the unbiased dataset the oracle was trained on.
    pub training_provenance: String,
}

impl<S: Scalar> OracleClassifier<S> {
    /// Mean cross entropy of this oracle's predictions against `targets`
    /// on a [-1,1] NCHW batch.
    pub fn mean_ce(&mut self, x: &Arr<S>, targets: &[usize]) -> f64 {
        let logits = self.model.logits(x, false);
        let mut tape = Tape::<S>::new();
        let lv = tape.constant(logits);
        let rows = softmax_cross_entropy_rows(&mut tape, lv, targets);
        let m = tape.mean(rows);
        tape.scalar_value(m).as_f64()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DiagnosticsError> {
        self.model
            .save(
                path,
                serde_json::json!({
                    "label_kind": self.label_kind,
                    "held_out_acc": self.held_out_acc,
                    "training_provenance": self.training_provenance,
                }),
            )
            .map_err(DiagnosticsError::from)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DiagnosticsError> {
        let (model, extra) = DebiasModel::<S>::load(path)?;
        let label_kind = serde_json::from_value(extra["label_kind"].clone())
            .map_err(|e| DiagnosticsError::Config(format!("bad oracle meta: {e}")))?;
        Ok(OracleClassifier {
            model,
            label_kind,
            held_out_acc: extra["held_out_acc"].as_f64().unwrap_or(0.0),
            training_provenance: extra["training_provenance"].as_str().unwrap_or("").to_string(),
        })
    }
}

fn oracle_targets(dataset: &BiasedDataset, kind: LabelKind) -> Vec<usize> {
    dataset
        .samples
        .iter()
        .map(|s| match kind {
            LabelKind::Bias => s.bias_label,
            LabelKind::Signal => s.class_label,
        })
        .collect()
}

/// Train an oracle on an unbiased split; a biased (train) split is
/// rejected as a provenance violation. Held-out accuracy is measured on
/// `held_out` (an unbiased test split).
pub fn train_oracle<S: Scalar>(
    dataset: &BiasedDataset,
    held_out: &BiasedDataset,
    label_kind: LabelKind,
    config: &OracleConfig,
) -> Result<OracleClassifier<S>, DiagnosticsError> {
    if dataset.split == Split::Train {
        return Err(DiagnosticsError::Provenance(
            "oracles must be trained on an unbiased split, got the biased train split".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(DiagnosticsError::Config("empty oracle training set".into()));
    }
    let first = &dataset.samples[0].image;
    let k = dataset.num_classes();
    let arch = EncoderArch::for_kind(config.encoder, first.h, first.w, k);
    let mut model = DebiasModel::<S>::new(arch, config.seed);
    let mut adam = Adam::new(&model.store, config.lr);
    let targets = oracle_targets(dataset, label_kind);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = stream(config.seed, &[tag::PROBE, epoch as u64]);
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(config.batch_size) {
            let (x01, _) = crate::debias::train::batch01::<S>(dataset, chunk);
            let x = x01.mapv(|v| v + v - S::one());
            let batch_targets: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::<S>::new();
            let bound = model.store.bind(&mut tape);
            let xv = tape.constant(x);
            let r = model.encode(&mut tape, &bound, xv, true);
            let logits = model.classify(&mut tape, &bound, r);
            let loss = crate::nn::losses::softmax_cross_entropy_mean_smoothed(
                &mut tape,
                logits,
                &batch_targets,
                config.label_smoothing,
            );
            let grads: Vec<Arr<S>> = {
                let gv = tape.grad(loss, bound.all());
                gv.into_iter().map(|g| tape.value(g).clone()).collect()
            };
            adam.step(&mut model.store, &grads);
        }
    }

    // held-out accuracy on the probed attribute
    let held_targets = oracle_targets(held_out, label_kind);
    let mut correct = 0usize;
    for chunk in (0..held_out.len()).collect::<Vec<_>>().chunks(512) {
        let (x01, _) = crate::debias::train::batch01::<S>(held_out, chunk);
        let x = x01.mapv(|v| v + v - S::one());
        let logits = model.logits(&x, false);
        for (row, &i) in chunk.iter().enumerate() {
            let mut best = 0;
            let mut bestv = logits[[row, 0]];
            for j in 1..k {
                if logits[[row, j]] > bestv {
                    bestv = logits[[row, j]];
                    best = j;
                }
            }
            if best == held_targets[i] {
                correct += 1;
            }
        }
    }
    let held_out_acc = correct as f64 / held_out.len().max(1) as f64;

    Ok(OracleClassifier {
        model,
        label_kind,
        held_out_acc,
        training_provenance: dataset.config.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::source::{synthetic_digits, SourceConfig};
    use crate::datasets::{build_colored_mnist, DatasetConfig};

    #[test]
    fn biased_train_split_is_rejected() {
        let src = synthetic_digits(SourceConfig::new(32, 8, 8, 2));
        let bundle = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.0, 1)).unwrap();
        let cfg = OracleConfig { epochs: 1, batch_size: 8, lr: 1e-3, seed: 0, encoder: EncoderKind::Mlp, label_smoothing: 0.1 };
        match train_oracle::<f32>(&bundle.train, &bundle.unbiased_test, LabelKind::Bias, &cfg) {
            Err(DiagnosticsError::Provenance(_)) => {}
            other => panic!("expected provenance error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn invalid_label_kind_string_is_rejected() {
        use std::str::FromStr;
        assert!(LabelKind::from_str("texture").is_err());
        assert_eq!(LabelKind::from_str("bias").unwrap(), LabelKind::Bias);
        assert_eq!(LabelKind::from_str("signal").unwrap(), LabelKind::Signal);
    }

    /// Color is near-separable: a small oracle gets high held-out color
    /// accuracy fast.
    #[test]
    fn bias_oracle_learns_color_quickly() {
        let src = synthetic_digits(SourceConfig::new(64, 600, 1500, 5));
        let bundle = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.0, 1)).unwrap();
        let cfg = OracleConfig { epochs: 30, batch_size: 64, lr: 1e-3, seed: 0, encoder: EncoderKind::Mlp, label_smoothing: 0.1 };
        let oracle =
            train_oracle::<f32>(&bundle.unbiased_train, &bundle.unbiased_test, LabelKind::Bias, &cfg)
                .unwrap();
        assert!(
            oracle.held_out_acc > 0.9,
            "color oracle should exceed 90% quickly, got {}",
            oracle.held_out_acc
        );
    }

    #[test]
    fn oracle_checkpoint_round_trips() {
        let src = synthetic_digits(SourceConfig::new(32, 16, 16, 5));
        let bundle = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.0, 1)).unwrap();
        let cfg = OracleConfig { epochs: 1, batch_size: 16, lr: 1e-3, seed: 0, encoder: EncoderKind::Mlp, label_smoothing: 0.1 };
        let oracle =
            train_oracle::<f32>(&bundle.unbiased_train, &bundle.unbiased_test, LabelKind::Signal, &cfg)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.bin");
        oracle.save(&path).unwrap();
        let loaded = OracleClassifier::<f32>::load(&path).unwrap();
        assert_eq!(loaded.label_kind, LabelKind::Signal);
        assert_eq!(loaded.training_provenance, oracle.training_provenance);
    }
}
