//! Dense kernels behind the tape ops: im2col-based convolution family.
//!
//! The three convolution kernels (`conv2d`, `conv_transpose2d`,
//! `conv2d_wgrad`) are mutually adjoint trilinear maps, so each one's
//! gradients are expressible with the other two. That closure property is
//! what lets the tape differentiate through its own backward pass (needed
//! for the gradient penalty).

use ndarray::{Array2, Array4, ArrayView4, Axis};

use crate::scalar::Scalar;

/// Output spatial size of a convolution (floor semantics).
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Canonical output spatial size of a transposed convolution.
pub fn convt_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Unfold one sample `[c,h,w]` into a `[c*kh*kw, oh*ow]` patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &ArrayView4<S>,
    n: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<S> {
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut col = Array2::<S>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let mut dst = col.row_mut(row);
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        dst[oi * ow + oj] = x[[n, ci, ii as usize, jj as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold a `[c*kh*kw, oh*ow]` patch matrix back into `[c,h,w]`, accumulating
/// overlaps. Exact adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &Array2<S>,
    out: &mut Array4<S>,
    n: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (c, h, w) = (out.shape()[1], out.shape()[2], out.shape()[3]);
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = col.row(row);
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        out[[n, ci, ii as usize, jj as usize]] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

/// 2-D convolution. `x: [n,ic,h,w]`, `w: [oc,ic,kh,kw]` -> `[n,oc,oh,ow]`.
pub fn conv2d<S: Scalar>(x: &ArrayView4<S>, w: &ArrayView4<S>, stride: usize, pad: usize) -> Array4<S> {
    let (n, ic, h, ww) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, wic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(ic, wic, "conv2d channel mismatch");
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(ww, kw, stride, pad);
    let wmat = w.to_shape((oc, ic * kh * kw)).unwrap().to_owned();
    let mut y = Array4::<S>::zeros((n, oc, oh, ow));
    for s in 0..n {
        let col = im2col(x, s, kh, kw, stride, pad, oh, ow);
        let out = wmat.dot(&col);
        y.index_axis_mut(Axis(0), s)
            .assign(&out.to_shape((oc, oh, ow)).unwrap());
    }
    y
}

/// Adjoint of [`conv2d`] in its first argument.
/// `g: [n,oc,gh,gw]`, `w: [oc,ic,kh,kw]` -> `[n,ic,oh,ow]` with explicit
/// output spatial dims (so truncated floor-division cases round-trip).
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d<S: Scalar>(
    g: &ArrayView4<S>,
    w: &ArrayView4<S>,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array4<S> {
    let (n, goc, gh, gw) = (g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]);
    let (oc, ic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(goc, oc, "conv_transpose2d channel mismatch");
    let wmat_t = w
        .to_shape((oc, ic * kh * kw))
        .unwrap()
        .t()
        .to_owned();
    let mut y = Array4::<S>::zeros((n, ic, oh, ow));
    for s in 0..n {
        let gmat = g
            .index_axis(Axis(0), s)
            .to_shape((oc, gh * gw))
            .unwrap()
            .to_owned();
        let col = wmat_t.dot(&gmat);
        col2im(&col, &mut y, s, kh, kw, stride, pad, gh, gw);
    }
    y
}

/// Adjoint of [`conv2d`] in its weight argument.
/// `x: [n,ic,h,w]`, `g: [n,oc,oh,ow]` -> `[oc,ic,kh,kw]`.
pub fn conv2d_wgrad<S: Scalar>(
    x: &ArrayView4<S>,
    g: &ArrayView4<S>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Array4<S> {
    let (n, ic) = (x.shape()[0], x.shape()[1]);
    let (gn, oc, oh, ow) = (g.shape()[0], g.shape()[1], g.shape()[2], g.shape()[3]);
    assert_eq!(n, gn, "conv2d_wgrad batch mismatch");
    let mut acc = Array2::<S>::zeros((oc, ic * kh * kw));
    for s in 0..n {
        let col = im2col(x, s, kh, kw, stride, pad, oh, ow);
        let gmat = g
            .index_axis(Axis(0), s)
            .to_shape((oc, oh * ow))
            .unwrap()
            .to_owned();
        acc = acc + gmat.dot(&col.t());
    }
    acc.to_shape((oc, ic, kh, kw)).unwrap().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::Rng;

    fn randn4(rng: &mut impl Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(d, |_| rng.gen_range(-1.0..1.0))
    }

    /// Naive direct convolution to check the im2col path.
    fn conv2d_naive(x: &Array4<f64>, w: &Array4<f64>, stride: usize, pad: usize) -> Array4<f64> {
        let (n, ic, h, ww) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oc, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = conv_out_dim(h, kh, stride, pad);
        let ow = conv_out_dim(ww, kw, stride, pad);
        let mut y = Array4::<f64>::zeros((n, oc, oh, ow));
        for s in 0..n {
            for o in 0..oc {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ic {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let ii = (oi * stride + ki) as isize - pad as isize;
                                    let jj = (oj * stride + kj) as isize - pad as isize;
                                    if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < ww {
                                        acc += x[[s, c, ii as usize, jj as usize]]
                                            * w[[o, c, ki, kj]];
                                    }
                                }
                            }
                        }
                        y[[s, o, oi, oj]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv2d_matches_naive() {
        let mut rng = crate::rng::stream(11, &[1]);
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 4), (1, 3, 7), (2, 0, 1)] {
            let x = randn4(&mut rng, (2, 3, 9, 9));
            let w = randn4(&mut rng, (4, 3, k, k));
            let got = conv2d(&x.view(), &w.view(), stride, pad);
            let want = conv2d_naive(&x, &w, stride, pad);
            let diff = (&got - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "stride={stride} pad={pad} k={k} diff={diff}");
        }
    }

    /// <conv(x,w), g> == <x, convT(g,w)> == <w, wgrad(x,g)>.
    #[test]
    fn conv_family_is_mutually_adjoint() {
        let mut rng = crate::rng::stream(12, &[2]);
        for &(stride, pad, k, h) in &[(1usize, 1usize, 3usize, 8usize), (2, 1, 4, 8), (2, 1, 4, 7)] {
            let x = randn4(&mut rng, (2, 3, h, h));
            let w = randn4(&mut rng, (5, 3, k, k));
            let y = conv2d(&x.view(), &w.view(), stride, pad);
            let g = randn4(
                &mut rng,
                (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]),
            );

            let ip_y: f64 = (&y * &g).sum();
            let xt = conv_transpose2d(&g.view(), &w.view(), stride, pad, h, h);
            let ip_x: f64 = (&x * &xt).sum();
            let wg = conv2d_wgrad(&x.view(), &g.view(), stride, pad, k, k);
            let ip_w: f64 = (&w * &wg).sum();

            assert!((ip_y - ip_x).abs() < 1e-10, "convT adjoint broken: {ip_y} vs {ip_x}");
            assert!((ip_y - ip_w).abs() < 1e-10, "wgrad adjoint broken: {ip_y} vs {ip_w}");
        }
    }

    #[test]
    fn convt_canonical_dims_invert_stride2() {
        assert_eq!(convt_out_dim(14, 4, 2, 1), 28);
        assert_eq!(convt_out_dim(7, 4, 2, 1), 14);
        assert_eq!(conv_out_dim(28, 4, 2, 1), 14);
        assert_eq!(conv_out_dim(7, 4, 2, 1), 3);
    }
}
