//! Eager reverse-mode autodiff on a flat tape.
//!
//! [`Tape::grad`] emits the backward pass as ordinary tape ops, so the
//! result gradients are themselves differentiable nodes. Differentiating a
//! gradient (as the Wasserstein gradient penalty requires) is therefore
//! just a second `grad` call; no special machinery. Piecewise-linear
//! activations use the almost-everywhere derivative, with the mask treated
//! as locally constant on the second pass.

pub mod check;
pub mod kernels;

use ndarray::{concatenate, Axis, IxDyn, Slice as NdSlice};

use crate::scalar::Scalar;
use crate::Arr;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Detach(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    /// a*x + b with scalar constants.
    Affine(Var, S, S),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Broadcast(Var),
    SumTo(Var),
    Sum(Var),
    /// Keep-dim sum over one axis.
    SumAxis(Var, usize),
    /// Keep-dim max over one axis; not differentiated (stabilizer only).
    MaxAxisDetached(Var, usize),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Abs(Var),
    /// Derivative mask of (leaky-)relu; constant under differentiation.
    StepMask(Var, S),
    /// sign(x); constant under differentiation (pairs with Abs).
    SignDetached(Var),
    Conv2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvT2d { x: Var, w: Var, stride: usize, pad: usize },
    ConvWGrad { x: Var, g: Var, stride: usize, pad: usize, kh: usize, kw: usize },
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize, len: usize },
    PadAxis { x: Var, axis: usize, before: usize },
}

struct Node<S: Scalar> {
    value: Arr<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Flat computation tape; values are computed eagerly as ops are pushed.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Arr<S>, op: Op<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that does not require gradient.
    pub fn constant(&mut self, value: Arr<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that requires gradient (a trainable parameter or probed input).
    pub fn param(&mut self, value: Arr<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Arr<S> {
        &self.nodes[v.0].value
    }

    /// Value of a node holding a single element.
    pub fn scalar_value(&self, v: Var) -> S {
        let a = self.value(v);
        assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        *a.iter().next().unwrap()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape");
        let v = self.value(a) + self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "sub shape");
        let v = self.value(a) - self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shape");
        let v = self.value(a) * self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "div shape");
        let v = self.value(a) / self.value(b);
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Div(a, b), g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| -x);
        let g = self.ng(a);
        self.push(v, Op::Neg(a), g)
    }

    /// a*x + b with scalar constants.
    pub fn affine(&mut self, x: Var, a: S, b: S) -> Var {
        let v = self.value(x).mapv(|e| a * e + b);
        let g = self.ng(x);
        self.push(v, Op::Affine(x, a, b), g)
    }

    pub fn scale(&mut self, x: Var, a: S) -> Var {
        self.affine(x, a, S::zero())
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<ndarray::Ix2>().expect("matmul lhs 2-d");
        let bv = self.value(b).view().into_dimensionality::<ndarray::Ix2>().expect("matmul rhs 2-d");
        let v = av.dot(&bv).into_dyn();
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a).view().into_dimensionality::<ndarray::Ix2>().expect("transpose 2-d");
        let v = av.t().to_owned().into_dyn();
        let g = self.ng(a);
        self.push(v, Op::Transpose(a), g)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .to_shape(IxDyn(shape))
            .expect("reshape size mismatch")
            .to_owned();
        let g = self.ng(a);
        self.push(v, Op::Reshape(a), g)
    }

    /// Broadcast to a larger shape (numpy right-aligned rules).
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self
            .value(a)
            .broadcast(IxDyn(shape))
            .expect("broadcast incompatible")
            .to_owned();
        let g = self.ng(a);
        self.push(v, Op::Broadcast(a), g)
    }

    /// Sum down to a smaller shape; exact adjoint of [`Tape::broadcast`].
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = sum_to_shape(self.value(a), shape);
        let g = self.ng(a);
        self.push(v, Op::SumTo(a), g)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(axis), &views).expect("concat shape");
        let g = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::Concat(parts.to_vec(), axis), g)
    }

    pub fn slice_axis(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let v = self
            .value(x)
            .slice_axis(Axis(axis), NdSlice::from(start..start + len))
            .to_owned();
        let g = self.ng(x);
        self.push(v, Op::Slice { x, axis, start, len }, g)
    }

    pub fn pad_axis(&mut self, x: Var, axis: usize, before: usize, after: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let mut shape = xs.clone();
        shape[axis] += before + after;
        let mut v = Arr::<S>::zeros(IxDyn(&shape));
        v.slice_axis_mut(Axis(axis), NdSlice::from(before..before + xs[axis]))
            .assign(self.value(x));
        let g = self.ng(x);
        self.push(v, Op::PadAxis { x, axis, before }, g)
    }

    // ---- reductions ----

    /// Sum of all elements, producing a 0-d node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Arr::from_elem(IxDyn(&[]), self.value(a).sum());
        let g = self.ng(a);
        self.push(v, Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.affine(s, S::one() / S::of_usize(n), S::zero())
    }

    /// Keep-dim sum over one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let mut v = self.value(a).sum_axis(Axis(axis));
        v.insert_axis_inplace(Axis(axis));
        let g = self.ng(a);
        self.push(v, Op::SumAxis(a, axis), g)
    }

    /// Keep-dim max over one axis. Treated as a constant by `grad`; use only
    /// where the exact gradient cancels (log-sum-exp stabilization).
    pub fn max_axis_detached(&mut self, a: Var, axis: usize) -> Var {
        let mut v = self
            .value(a)
            .fold_axis(Axis(axis), S::neg_infinity(), |m, x| if *x > *m { *x } else { *m });
        v.insert_axis_inplace(Axis(axis));
        self.push(v, Op::MaxAxisDetached(a, axis), false)
    }

    // ---- nonlinearities ----

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.exp());
        let g = self.ng(a);
        self.push(v, Op::Exp(a), g)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.ln());
        let g = self.ng(a);
        self.push(v, Op::Ln(a), g)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.sqrt());
        let g = self.ng(a);
        self.push(v, Op::Sqrt(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.tanh());
        let g = self.ng(a);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > S::zero() { x } else { S::zero() });
        let g = self.ng(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Var {
        let v = self.value(a).mapv(|x| if x > S::zero() { x } else { slope * x });
        let g = self.ng(a);
        self.push(v, Op::LeakyRelu(a, slope), g)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.abs());
        let g = self.ng(a);
        self.push(v, Op::Abs(a), g)
    }

    fn step_mask(&mut self, a: Var, slope: S) -> Var {
        let v = self.value(a).mapv(|x| if x > S::zero() { S::one() } else { slope });
        self.push(v, Op::StepMask(a, slope), false)
    }

    fn sign_detached(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.signum());
        self.push(v, Op::SignDetached(a), false)
    }

    /// Same value, gradient blocked.
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Detach(a), false)
    }

    // ---- convolution family ----

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<ndarray::Ix4>().expect("conv x 4-d");
        let wv = self.value(w).view().into_dimensionality::<ndarray::Ix4>().expect("conv w 4-d");
        let v = kernels::conv2d(&xv, &wv, stride, pad).into_dyn();
        let g = self.ng(x) || self.ng(w);
        self.push(v, Op::Conv2d { x, w, stride, pad }, g)
    }

    /// Transposed convolution with canonical output dims
    /// `(h-1)*stride + k - 2*pad`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (kh, kw) = {
            let ws = self.value(w).shape();
            (ws[2], ws[3])
        };
        let xs = self.value(x).shape().to_vec();
        let oh = kernels::convt_out_dim(xs[2], kh, stride, pad);
        let ow = kernels::convt_out_dim(xs[3], kw, stride, pad);
        self.conv_transpose2d_to(x, w, stride, pad, oh, ow)
    }

    fn conv_transpose2d_to(&mut self, x: Var, w: Var, stride: usize, pad: usize, oh: usize, ow: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<ndarray::Ix4>().expect("convT x 4-d");
        let wv = self.value(w).view().into_dimensionality::<ndarray::Ix4>().expect("convT w 4-d");
        let v = kernels::conv_transpose2d(&xv, &wv, stride, pad, oh, ow).into_dyn();
        let g = self.ng(x) || self.ng(w);
        self.push(v, Op::ConvT2d { x, w, stride, pad }, g)
    }

    fn conv2d_wgrad(&mut self, x: Var, g: Var, stride: usize, pad: usize, kh: usize, kw: usize) -> Var {
        let xv = self.value(x).view().into_dimensionality::<ndarray::Ix4>().expect("wgrad x 4-d");
        let gv = self.value(g).view().into_dimensionality::<ndarray::Ix4>().expect("wgrad g 4-d");
        let v = kernels::conv2d_wgrad(&xv, &gv, stride, pad, kh, kw).into_dyn();
        let ng = self.ng(x) || self.ng(g);
        self.push(v, Op::ConvWGrad { x, g, stride, pad, kh, kw }, ng)
    }

    // ---- backward ----

    /// Reverse-mode gradient of a scalar `root` w.r.t. each of `wrt`.
    ///
    /// Gradients are emitted as tape ops, so they can be further composed
    /// and differentiated. Unreachable `wrt` entries get zero gradients.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(root).len(), 1, "grad root must be scalar");
        let n0 = root.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n0];
        let seed_shape = self.shape(root);
        let seed = self.constant(Arr::from_elem(IxDyn(&seed_shape), S::one()));
        grads[root.0] = Some(seed);

        for i in (0..n0).rev() {
            let Some(gy) = grads[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf | Op::Detach(_) | Op::MaxAxisDetached(..) | Op::StepMask(..) | Op::SignDetached(_) => {}
                Op::Add(a, b) => {
                    self.accum(&mut grads, a, gy);
                    self.accum(&mut grads, b, gy);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, a, gy);
                    let nb = self.neg(gy);
                    self.accum(&mut grads, b, nb);
                }
                Op::Mul(a, b) => {
                    if self.ng(a) {
                        let da = self.mul(gy, b);
                        self.accum(&mut grads, a, da);
                    }
                    if self.ng(b) {
                        let db = self.mul(gy, a);
                        self.accum(&mut grads, b, db);
                    }
                }
                Op::Div(a, b) => {
                    if self.ng(a) {
                        let da = self.div(gy, b);
                        self.accum(&mut grads, a, da);
                    }
                    if self.ng(b) {
                        // d/db (a/b) = -y/b, with y the stored quotient.
                        let y = Var(i);
                        let t = self.mul(gy, y);
                        let t = self.div(t, b);
                        let db = self.neg(t);
                        self.accum(&mut grads, b, db);
                    }
                }
                Op::Neg(a) => {
                    let da = self.neg(gy);
                    self.accum(&mut grads, a, da);
                }
                Op::Affine(x, a, _) => {
                    let dx = self.scale(gy, a);
                    self.accum(&mut grads, x, dx);
                }
                Op::MatMul(a, b) => {
                    if self.ng(a) {
                        let bt = self.transpose(b);
                        let da = self.matmul(gy, bt);
                        self.accum(&mut grads, a, da);
                    }
                    if self.ng(b) {
                        let at = self.transpose(a);
                        let db = self.matmul(at, gy);
                        self.accum(&mut grads, b, db);
                    }
                }
                Op::Transpose(a) => {
                    let da = self.transpose(gy);
                    self.accum(&mut grads, a, da);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(a);
                    let da = self.reshape(gy, &shape);
                    self.accum(&mut grads, a, da);
                }
                Op::Broadcast(a) => {
                    let shape = self.shape(a);
                    let da = self.sum_to(gy, &shape);
                    self.accum(&mut grads, a, da);
                }
                Op::SumTo(a) => {
                    let shape = self.shape(a);
                    let da = self.broadcast(gy, &shape);
                    self.accum(&mut grads, a, da);
                }
                Op::Sum(a) => {
                    let shape = self.shape(a);
                    let da = self.broadcast(gy, &shape);
                    self.accum(&mut grads, a, da);
                }
                Op::SumAxis(a, _) => {
                    let shape = self.shape(a);
                    let da = self.broadcast(gy, &shape);
                    self.accum(&mut grads, a, da);
                }
                Op::Exp(a) => {
                    let y = Var(i);
                    let da = self.mul(gy, y);
                    self.accum(&mut grads, a, da);
                }
                Op::Ln(a) => {
                    let da = self.div(gy, a);
                    self.accum(&mut grads, a, da);
                }
                Op::Sqrt(a) => {
                    // d sqrt = 0.5 / sqrt(x) = 0.5 / y
                    let y = Var(i);
                    let half = self.scale(gy, S::of(0.5));
                    let da = self.div(half, y);
                    self.accum(&mut grads, a, da);
                }
                Op::Tanh(a) => {
                    let y = Var(i);
                    let y2 = self.mul(y, y);
                    let one_m = self.affine(y2, -S::one(), S::one());
                    let da = self.mul(gy, one_m);
                    self.accum(&mut grads, a, da);
                }
                Op::Relu(a) => {
                    let m = self.step_mask(a, S::zero());
                    let da = self.mul(gy, m);
                    self.accum(&mut grads, a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let m = self.step_mask(a, slope);
                    let da = self.mul(gy, m);
                    self.accum(&mut grads, a, da);
                }
                Op::Abs(a) => {
                    let s = self.sign_detached(a);
                    let da = self.mul(gy, s);
                    self.accum(&mut grads, a, da);
                }
                Op::Conv2d { x, w, stride, pad } => {
                    if self.ng(x) {
                        let xs = self.shape(x);
                        let dx = self.conv_transpose2d_to(gy, w, stride, pad, xs[2], xs[3]);
                        self.accum(&mut grads, x, dx);
                    }
                    if self.ng(w) {
                        let ws = self.shape(w);
                        let dw = self.conv2d_wgrad(x, gy, stride, pad, ws[2], ws[3]);
                        self.accum(&mut grads, w, dw);
                    }
                }
                Op::ConvT2d { x, w, stride, pad } => {
                    if self.ng(x) {
                        let dx = self.conv2d(gy, w, stride, pad);
                        self.accum(&mut grads, x, dx);
                    }
                    if self.ng(w) {
                        let ws = self.shape(w);
                        let dw = self.conv2d_wgrad(gy, x, stride, pad, ws[2], ws[3]);
                        self.accum(&mut grads, w, dw);
                    }
                }
                Op::ConvWGrad { x, g, stride, pad, .. } => {
                    if self.ng(x) {
                        let xs = self.shape(x);
                        let dx = self.conv_transpose2d_to(g, gy, stride, pad, xs[2], xs[3]);
                        self.accum(&mut grads, x, dx);
                    }
                    if self.ng(g) {
                        let dg = self.conv2d(x, gy, stride, pad);
                        self.accum(&mut grads, g, dg);
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for p in parts {
                        let len = self.shape(p)[axis];
                        if self.ng(p) {
                            let dp = self.slice_axis(gy, axis, start, len);
                            self.accum(&mut grads, p, dp);
                        }
                        start += len;
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    let xdim = self.shape(x)[axis];
                    let dx = self.pad_axis(gy, axis, start, xdim - start - len);
                    self.accum(&mut grads, x, dx);
                }
                Op::PadAxis { x, axis, before } => {
                    let len = self.shape(x)[axis];
                    let dx = self.slice_axis(gy, axis, before, len);
                    self.accum(&mut grads, x, dx);
                }
            }
        }

        wrt.iter()
            .map(|v| {
                grads.get(v.0).and_then(|g| *g).unwrap_or_else(|| {
                    let shape = self.shape(*v);
                    self.constant(Arr::zeros(IxDyn(&shape)))
                })
            })
            .collect()
    }

    fn accum(&mut self, grads: &mut [Option<Var>], target: Var, contribution: Var) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        grads[target.0] = Some(match grads[target.0] {
            None => contribution,
            Some(existing) => self.add(existing, contribution),
        });
    }
}

/// Sum an array down to `shape` (adjoint of numpy-style broadcast).
fn sum_to_shape<S: Scalar>(a: &Arr<S>, shape: &[usize]) -> Arr<S> {
    let mut v = a.clone();
    while v.ndim() > shape.len() {
        v = v.sum_axis(Axis(0));
    }
    for ax in 0..shape.len() {
        if v.shape()[ax] != shape[ax] {
            assert_eq!(shape[ax], 1, "sum_to incompatible shapes");
            let mut s = v.sum_axis(Axis(ax));
            s.insert_axis_inplace(Axis(ax));
            v = s;
        }
    }
    v
}
