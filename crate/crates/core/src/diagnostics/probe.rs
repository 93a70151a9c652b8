//! Bias/signal loss trajectories over translator training.
//!
//! For each generator snapshot, translate a fixed probe batch to fixed
//! uniformly drawn target domains and score the outputs with the two
//! oracles against the *target* domain: a falling bias loss means the
//! generator is writing the target bias mode; a high signal loss means it
//! is not writing the target class content.

use std::path::{Path, PathBuf};

use super::oracle::OracleClassifier;
use super::DiagnosticsError;
use crate::datasets::BiasedDataset;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::translator::{translate, TranslationModel};
use crate::Arr;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub iteration: usize,
    pub bias_loss: f64,
    pub signal_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProbeCurve {
    pub points: Vec<ProbePoint>,
}

impl ProbeCurve {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        for w in self.points.windows(2) {
            if w[1].iteration <= w[0].iteration {
                return Err(DiagnosticsError::Config("iterations must strictly increase".into()));
            }
        }
        if self.points.iter().any(|p| !p.bias_loss.is_finite() || !p.signal_loss.is_finite()) {
            return Err(DiagnosticsError::Config("non-finite probe losses".into()));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,bias_loss,signal_loss\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.iteration, p.bias_loss, p.signal_loss));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DiagnosticsError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(DiagnosticsError::Config(format!("bad csv line {i}")));
            }
            points.push(ProbePoint {
                iteration: f[0].parse().map_err(|e| DiagnosticsError::Config(format!("{e}")))?,
                bias_loss: f[1].parse().map_err(|e| DiagnosticsError::Config(format!("{e}")))?,
                signal_loss: f[2].parse().map_err(|e| DiagnosticsError::Config(format!("{e}")))?,
            });
        }
        let curve = ProbeCurve { points };
        curve.validate()?;
        Ok(curve)
    }
}

/// Fixed probe inputs: a batch of images and their target domains, drawn
/// once from the diagnostic seed and reused across every checkpoint.
pub struct ProbeBatch<S: Scalar> {
    pub x: Arr<S>,
    pub targets: Vec<usize>,
}

impl<S: Scalar> ProbeBatch<S> {
    pub fn draw(dataset: &BiasedDataset, size: usize, k: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = stream(seed, &[tag::PROBE, 0]);
        let indices: Vec<usize> =
            (0..size.min(dataset.len())).map(|_| rng.gen_range(0..dataset.len())).collect();
        let (x01, _) = crate::debias::train::batch01::<S>(dataset, &indices);
        let x = x01.mapv(|v| v + v - S::one());
        let targets: Vec<usize> = (0..indices.len()).map(|_| rng.gen_range(0..k)).collect();
        ProbeBatch { x, targets }
    }
}

/// Score one generator snapshot with both oracles.
pub fn probe_checkpoint<S: Scalar>(
    model: &TranslationModel<S>,
    bias_oracle: &mut OracleClassifier<S>,
    signal_oracle: &mut OracleClassifier<S>,
    batch: &ProbeBatch<S>,
) -> Result<(f64, f64), DiagnosticsError> {
    let k = model.num_domains();
    if bias_oracle.model.arch.num_classes != k || signal_oracle.model.arch.num_classes != k {
        return Err(DiagnosticsError::DomainMismatch {
            expected: k,
            actual: bias_oracle.model.arch.num_classes,
        });
    }
    let translated = translate(model, &batch.x, &batch.targets)?;
    let bias_loss = bias_oracle.mean_ce(&translated, &batch.targets);
    let signal_loss = signal_oracle.mean_ce(&translated, &batch.targets);
    Ok((bias_loss, signal_loss))
}

/// Trace bias/signal losses across a stream of generator checkpoints.
pub fn measure_bias_signal_losses<S: Scalar>(
    checkpoints: &[(usize, PathBuf)],
    bias_oracle: &mut OracleClassifier<S>,
    signal_oracle: &mut OracleClassifier<S>,
    batch: &ProbeBatch<S>,
) -> Result<ProbeCurve, DiagnosticsError> {
    let mut points = Vec::with_capacity(checkpoints.len());
    for (iteration, path) in checkpoints {
        let (model, _) = TranslationModel::<S>::load(path)?;
        let (bias_loss, signal_loss) = probe_checkpoint(&model, bias_oracle, signal_oracle, batch)?;
        points.push(ProbePoint { iteration: *iteration, bias_loss, signal_loss });
    }
    points.sort_by_key(|p| p.iteration);
    let curve = ProbeCurve { points };
    curve.validate()?;
    Ok(curve)
}

/// Write the curve CSV plus a line-chart PNG next to it.
pub fn write_probe_outputs(curve: &ProbeCurve, dir: &Path) -> Result<(), DiagnosticsError> {
    std::fs::create_dir_all(dir).map_err(|e| DiagnosticsError::Io(e.to_string()))?;
    std::fs::write(dir.join("probe.csv"), curve.to_csv())
        .map_err(|e| DiagnosticsError::Io(e.to_string()))?;
    let png = super::chart::render_probe_chart(curve);
    std::fs::write(dir.join("probe.png"), png).map_err(|e| DiagnosticsError::Io(e.to_string()))?;
    Ok(())
}
