//! Classification losses shared by the translator, trainer and probes.

use ndarray::IxDyn;

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::Arr;

/// Per-row softmax cross entropy: logits `[n,K]`, integer targets, -> `[n,1]`.
///
/// Stabilized by subtracting the detached row max before exponentiation.
pub fn softmax_cross_entropy_rows<S: Scalar>(tape: &mut Tape<S>, logits: Var, targets: &[usize]) -> Var {
    let shape = tape.shape(logits);
    assert_eq!(shape.len(), 2, "logits must be [n,K]");
    let (n, k) = (shape[0], shape[1]);
    assert_eq!(targets.len(), n, "target count mismatch");
    for &t in targets {
        assert!(t < k, "target {t} out of range for {k} classes");
    }

    let m = tape.max_axis_detached(logits, 1);
    let mb = tape.broadcast(m, &[n, k]);
    let shifted = tape.sub(logits, mb);
    let e = tape.exp(shifted);
    let se = tape.sum_axis(e, 1);
    let lse = tape.ln(se); // [n,1]

    let mut onehot = Arr::<S>::zeros(IxDyn(&[n, k]));
    for (i, &t) in targets.iter().enumerate() {
        onehot[[i, t]] = S::one();
    }
    let oh = tape.constant(onehot);
    let picked_terms = tape.mul(shifted, oh);
    let picked = tape.sum_axis(picked_terms, 1); // [n,1]
    tape.sub(lse, picked)
}

/// Mean softmax cross entropy over the batch.
pub fn softmax_cross_entropy_mean<S: Scalar>(tape: &mut Tape<S>, logits: Var, targets: &[usize]) -> Var {
    let rows = softmax_cross_entropy_rows(tape, logits, targets);
    tape.mean(rows)
}

/// Summed softmax cross entropy over the batch.
pub fn softmax_cross_entropy_sum<S: Scalar>(tape: &mut Tape<S>, logits: Var, targets: &[usize]) -> Var {
    let rows = softmax_cross_entropy_rows(tape, logits, targets);
    tape.sum(rows)
}

/// Label-smoothed cross entropy (mean): the target distribution puts
/// `1 - eps` on the label and spreads `eps` uniformly. Keeps probe
/// classifiers calibrated instead of saturating their logits.
pub fn softmax_cross_entropy_mean_smoothed<S: Scalar>(
    tape: &mut Tape<S>,
    logits: Var,
    targets: &[usize],
    eps: f64,
) -> Var {
    let shape = tape.shape(logits);
    let (n, k) = (shape[0], shape[1]);
    assert_eq!(targets.len(), n);
    let m = tape.max_axis_detached(logits, 1);
    let mb = tape.broadcast(m, &[n, k]);
    let shifted = tape.sub(logits, mb);
    let e = tape.exp(shifted);
    let se = tape.sum_axis(e, 1);
    let lse = tape.ln(se); // [n,1]

    let mut target_dist = Arr::<S>::zeros(IxDyn(&[n, k]));
    let spread = eps / k as f64;
    for (i, &t) in targets.iter().enumerate() {
        for j in 0..k {
            target_dist[[i, j]] = S::of(if j == t { 1.0 - eps + spread } else { spread });
        }
    }
    let td = tape.constant(target_dist);
    let weighted = tape.mul(shifted, td);
    let picked = tape.sum_axis(weighted, 1);
    let rows = tape.sub(lse, picked);
    tape.mean(rows)
}

/// Top-1 accuracy of a logits array against integer targets (no tape).
pub fn accuracy<S: Scalar>(logits: &Arr<S>, targets: &[usize]) -> f64 {
    let shape = logits.shape();
    assert_eq!(shape.len(), 2);
    let (n, k) = (shape[0], shape[1]);
    assert_eq!(targets.len(), n);
    let mut correct = 0usize;
    for i in 0..n {
        let mut best = 0usize;
        let mut bestv = logits[[i, 0]];
        for j in 1..k {
            if logits[[i, j]] > bestv {
                bestv = logits[[i, j]];
                best = j;
            }
        }
        if best == targets[i] {
            correct += 1;
        }
    }
    correct as f64 / n as f64
}
