//! Finite-difference gradient checking.
//!
//! Central differences evaluated in the caller's scalar type; run these in
//! `f64` so discretization error sits well below the comparison tolerance.

use ndarray::IxDyn;

use crate::scalar::Scalar;
use crate::Arr;

/// Central-difference gradient of `f` at `x`.
pub fn numerical_grad<S: Scalar>(x: &Arr<S>, eps: S, mut f: impl FnMut(&Arr<S>) -> S) -> Arr<S> {
    let mut g = Arr::<S>::zeros(IxDyn(x.shape()));
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let orig = probe.as_slice_mut().unwrap()[idx];
        probe.as_slice_mut().unwrap()[idx] = orig + eps;
        let hi = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig - eps;
        let lo = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = orig;
        g.as_slice_mut().unwrap()[idx] = (hi - lo) / (eps + eps);
    }
    g
}

/// Largest relative error between two gradients, with an absolute floor so
/// near-zero entries compare absolutely.
pub fn max_rel_err<S: Scalar>(analytic: &Arr<S>, numeric: &Arr<S>, floor: S) -> S {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = S::zero();
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let denom = a.abs().max(n.abs()).max(floor);
        let e = (*a - *n).abs() / denom;
        if e > worst {
            worst = e;
        }
    }
    worst
}
