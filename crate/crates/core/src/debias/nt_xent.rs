//! Normalized temperature-scaled cross entropy over 2N projected views.

use ndarray::IxDyn;
use rand::Rng;

use super::DebiasError;
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::Arr;

/// Uniform target-domain draw for the bias transformation.
pub fn sample_target_domain(k: usize, rng: &mut impl Rng) -> Result<usize, DebiasError> {
    if k < 1 {
        return Err(DebiasError::Config(format!("need at least one domain, got {k}")));
    }
    Ok(rng.gen_range(0..k))
}

const DIAG_MASK: f64 = -1e9;

/// NT-Xent with an explicit positive-pair mapping (`pairing[i]` is the
/// positive of row `i`). Emits the loss onto the tape so gradients flow
/// into `z`.
pub fn nt_xent_loss<S: Scalar>(
    tape: &mut Tape<S>,
    z: Var,
    tau: f64,
    pairing: &[usize],
) -> Result<Var, DebiasError> {
    let shape = tape.shape(z);
    if shape.len() != 2 {
        return Err(DebiasError::Config(format!("z must be [2n,d], got {shape:?}")));
    }
    let rows = shape[0];
    if rows < 2 || rows % 2 != 0 {
        return Err(DebiasError::Config(format!("need an even number >= 2 of rows, got {rows}")));
    }
    if tau <= 0.0 {
        return Err(DebiasError::Config(format!("temperature must be > 0, got {tau}")));
    }
    if pairing.len() != rows {
        return Err(DebiasError::Config("pairing length mismatch".into()));
    }

    for (i, row) in tape.value(z).rows().into_iter().enumerate() {
        let norm2 = row.iter().fold(S::zero(), |a, &v| a + v * v);
        if norm2.as_f64() <= 0.0 {
            return Err(DebiasError::ZeroNormRow(i));
        }
    }

    // cosine similarity matrix
    let sq = tape.mul(z, z);
    let row_norm2 = tape.sum_axis(sq, 1);
    let row_norm = tape.sqrt(row_norm2);
    let norm_b = tape.broadcast(row_norm, &shape);
    let zn = tape.div(z, norm_b);
    let znt = tape.transpose(zn);
    let sim = tape.matmul(zn, znt);
    let scaled = tape.scale(sim, S::of(1.0 / tau));

    // exclude self-similarity from every denominator
    let mut diag = Arr::<S>::zeros(IxDyn(&[rows, rows]));
    for i in 0..rows {
        diag[[i, i]] = S::of(DIAG_MASK);
    }
    let diag = tape.constant(diag);
    let masked = tape.add(scaled, diag);

    // stabilized log-sum-exp per row
    let m = tape.max_axis_detached(masked, 1);
    let mb = tape.broadcast(m, &[rows, rows]);
    let sh = tape.sub(masked, mb);
    let e = tape.exp(sh);
    let se = tape.sum_axis(e, 1);
    let lse_sh = tape.ln(se);
    let lse = tape.add(lse_sh, m); // [rows,1]

    // positive-pair logits
    let mut pos_mask = Arr::<S>::zeros(IxDyn(&[rows, rows]));
    for (i, &j) in pairing.iter().enumerate() {
        assert_ne!(i, j, "a row cannot be its own positive");
        pos_mask[[i, j]] = S::one();
    }
    let pos_mask = tape.constant(pos_mask);
    let pos_terms = tape.mul(masked, pos_mask);
    let pos = tape.sum_axis(pos_terms, 1); // [rows,1]

    let per_row = tape.sub(lse, pos);
    Ok(tape.sum(per_row))
}

/// Interleaved pairing: rows (2k, 2k+1) are the positive pair from sample k.
pub fn interleaved_pairing(rows: usize) -> Vec<usize> {
    (0..rows).map(|i| i ^ 1).collect()
}

/// Block pairing: rows (k, n+k) are the positive pair.
pub fn block_pairing(rows: usize) -> Vec<usize> {
    let n = rows / 2;
    (0..rows).map(|i| (i + n) % rows).collect()
}

/// NT-Xent over interleaved pairs: `z` holds 2N rows where rows
/// (2k, 2k+1) are the two views of sample k. Returns the summed loss over
/// both directions of every pair.
pub fn nt_xent<S: Scalar>(z: &Arr<S>, tau: f64) -> Result<S, DebiasError> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let rows = z.shape()[0];
    let loss = nt_xent_loss(&mut tape, zv, tau, &interleaved_pairing(rows))?;
    Ok(tape.scalar_value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    /// Independent oracle: direct double-loop evaluation of the published
    /// formula in plain f64.
    pub fn nt_xent_bruteforce(z: &Array2<f64>, tau: f64, pairing: &[usize]) -> f64 {
        let rows = z.nrows();
        let cosine = |a: usize, b: usize| -> f64 {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for d in 0..z.ncols() {
                dot += z[[a, d]] * z[[b, d]];
                na += z[[a, d]] * z[[a, d]];
                nb += z[[b, d]] * z[[b, d]];
            }
            dot / (na.sqrt() * nb.sqrt())
        };
        let mut total = 0.0;
        for i in 0..rows {
            let j = pairing[i];
            let num = (cosine(i, j) / tau).exp();
            let mut denom = 0.0;
            for k in 0..rows {
                if k != i {
                    denom += (cosine(i, k) / tau).exp();
                }
            }
            total += -(num / denom).ln();
        }
        total
    }

    fn random_z(rng: &mut impl Rng, n_pairs: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((2 * n_pairs, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let z: Arr<f64> = ndarray::array![[0.3, -0.8, 0.1], [1.2, 0.4, -0.5]].into_dyn();
        let loss = nt_xent(&z, 0.1).unwrap();
        assert!(loss.abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn identical_rows_give_log3_per_term_independent_of_tau() {
        for tau in [0.01, 0.1, 1.0] {
            let z = Arr::<f64>::from_elem(IxDyn(&[4, 5]), 0.7);
            let loss = nt_xent(&z, tau).unwrap();
            let expect = 4.0 * 3.0f64.ln();
            assert!((loss - expect).abs() < 1e-9, "tau {tau}: {loss} vs {expect}");
        }
    }

    #[test]
    fn matches_bruteforce_on_random_batches() {
        let mut rng = crate::rng::stream(31, &[]);
        for trial in 0..100 {
            let n = rng.gen_range(1..=8);
            let d = rng.gen_range(2..=16);
            let tau = [0.01, 0.1, 1.0][trial % 3];
            let z = random_z(&mut rng, n, d);
            let got = nt_xent(&z.clone().into_dyn(), tau).unwrap();
            let want = nt_xent_bruteforce(&z, tau, &interleaved_pairing(2 * n));
            assert!(
                (got - want).abs() <= 1e-6 * want.abs().max(1.0),
                "trial {trial}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn zero_norm_row_is_rejected() {
        let mut z = Arr::<f64>::from_elem(IxDyn(&[4, 3]), 0.5);
        for d in 0..3 {
            z[[2, d]] = 0.0;
        }
        match nt_xent(&z, 0.1) {
            Err(DebiasError::ZeroNormRow(i)) => assert_eq!(i, 2),
            other => panic!("expected ZeroNormRow, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::autodiff::check::{max_rel_err, numerical_grad};
        let mut rng = crate::rng::stream(32, &[]);
        for &tau in &[0.01, 0.1, 1.0] {
            let z0 = random_z(&mut rng, 3, 4).into_dyn();
            let mut tape = Tape::<f64>::new();
            let zv = tape.param(z0.clone());
            let loss = nt_xent_loss(&mut tape, zv, tau, &interleaved_pairing(6)).unwrap();
            let g = tape.grad(loss, &[zv])[0];
            let analytic = tape.value(g).clone();
            let numeric = numerical_grad(&z0, 1e-6, |probe| {
                nt_xent(probe, tau).unwrap()
            });
            let err = max_rel_err(&analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "tau {tau}: rel err {err}");
        }
    }

    #[test]
    fn pair_permutation_invariance() {
        let mut rng = crate::rng::stream(33, &[]);
        let n = 4;
        let z = random_z(&mut rng, n, 5);
        let base = nt_xent(&z.clone().into_dyn(), 0.1).unwrap();
        // permute the pair order (move pair k to slot perm[k])
        let perm = [2usize, 0, 3, 1];
        let mut zp = Array2::<f64>::zeros((2 * n, 5));
        for (to, &from) in perm.iter().enumerate() {
            for d in 0..5 {
                zp[[2 * to, d]] = z[[2 * from, d]];
                zp[[2 * to + 1, d]] = z[[2 * from + 1, d]];
            }
        }
        let permuted = nt_xent(&zp.into_dyn(), 0.1).unwrap();
        assert!((base - permuted).abs() < 1e-9, "{base} vs {permuted}");
    }

    #[test]
    fn row_scale_invariance_of_cosine() {
        let mut rng = crate::rng::stream(34, &[]);
        let z = random_z(&mut rng, 3, 4);
        let base = nt_xent(&z.clone().into_dyn(), 0.1).unwrap();
        let mut zs = z.clone();
        for d in 0..4 {
            zs[[1, d]] *= 37.5;
            zs[[4, d]] *= 0.003;
        }
        let scaled = nt_xent(&zs.into_dyn(), 0.1).unwrap();
        assert!((base - scaled).abs() < 1e-6, "{base} vs {scaled}");
    }

    #[test]
    fn block_and_interleaved_pairings_agree() {
        let mut rng = crate::rng::stream(35, &[]);
        let n = 3;
        let d = 4;
        let z1 = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0f64));
        let z2 = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0f64));
        // interleaved layout
        let mut zi = Array2::<f64>::zeros((2 * n, d));
        for k in 0..n {
            for j in 0..d {
                zi[[2 * k, j]] = z1[[k, j]];
                zi[[2 * k + 1, j]] = z2[[k, j]];
            }
        }
        // block layout
        let mut zb = Array2::<f64>::zeros((2 * n, d));
        for k in 0..n {
            for j in 0..d {
                zb[[k, j]] = z1[[k, j]];
                zb[[n + k, j]] = z2[[k, j]];
            }
        }
        let li = nt_xent(&zi.into_dyn(), 0.05).unwrap();
        let mut tape = Tape::<f64>::new();
        let zv = tape.constant(zb.into_dyn());
        let lb = nt_xent_loss(&mut tape, zv, 0.05, &block_pairing(2 * n)).unwrap();
        let lb = tape.scalar_value(lb);
        assert!((li - lb).abs() < 1e-9, "{li} vs {lb}");
    }

    #[test]
    fn target_domain_sampling_is_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut rng = crate::rng::stream(36, &[]);
        let k = 10;
        let draws = 100_000;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[sample_target_domain(k, &mut rng).unwrap()] += 1;
        }
        let expected = draws as f64 / k as f64;
        let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "chi-square {stat} above 0.999 quantile {crit}");
    }

    #[test]
    fn single_domain_always_returns_zero() {
        let mut rng = crate::rng::stream(37, &[]);
        for _ in 0..20 {
            assert_eq!(sample_target_domain(1, &mut rng).unwrap(), 0);
        }
        assert!(sample_target_domain(0, &mut rng).is_err());
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let a: Vec<usize> = {
            let mut rng = crate::rng::stream(9, &[1]);
            (0..32).map(|_| sample_target_domain(10, &mut rng).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut rng = crate::rng::stream(9, &[1]);
            (0..32).map(|_| sample_target_domain(10, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
