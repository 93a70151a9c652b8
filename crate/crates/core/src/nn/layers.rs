//! Layers. Each layer registers its parameters in a [`ParamStore`] at
//! construction and reads them back through a [`Bound`] during forward.

use rand::Rng;

use super::{init_array, Bound, Init, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = store.register(
            format!("{name}.w"),
            init_array(rng, &[in_dim, out_dim], Init::HeNormal { fan_in: in_dim }),
        );
        let b = store.register(format!("{name}.b"), init_array::<S>(rng, &[out_dim], Init::Zeros));
        Linear { w, b, out_dim }
    }

    /// x: [n, in] -> [n, out]
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let n = tape.shape(x)[0];
        let y = tape.matmul(x, bound.var(self.w));
        let b = tape.reshape(bound.var(self.b), &[1, self.out_dim]);
        let bb = tape.broadcast(b, &[n, self.out_dim]);
        tape.add(y, bb)
    }
}

pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub out_ch: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        let w = store.register(format!("{name}.w"), init_array(rng, &[out_ch, in_ch, kernel, kernel], init));
        let b = store.register(format!("{name}.b"), init_array::<S>(rng, &[out_ch], Init::Zeros));
        Conv2d { w, b, out_ch, stride, pad }
    }

    /// x: [n, in_ch, h, w] -> [n, out_ch, oh, ow]
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let y = tape.conv2d(x, bound.var(self.w), self.stride, self.pad);
        add_channel_bias(tape, y, bound.var(self.b), self.out_ch)
    }
}

pub struct ConvTranspose2d {
    pub w: ParamId,
    pub b: ParamId,
    pub out_ch: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init: Init,
    ) -> Self {
        // transposed-conv weight layout: [in_ch, out_ch, kh, kw]
        let w = store.register(format!("{name}.w"), init_array(rng, &[in_ch, out_ch, kernel, kernel], init));
        let b = store.register(format!("{name}.b"), init_array::<S>(rng, &[out_ch], Init::Zeros));
        ConvTranspose2d { w, b, out_ch, stride, pad }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let y = tape.conv_transpose2d(x, bound.var(self.w), self.stride, self.pad);
        add_channel_bias(tape, y, bound.var(self.b), self.out_ch)
    }
}

fn add_channel_bias<S: Scalar>(tape: &mut Tape<S>, x: Var, b: Var, c: usize) -> Var {
    let shape = tape.shape(x);
    let br = tape.reshape(b, &[1, c, 1, 1]);
    let bb = tape.broadcast(br, &shape);
    tape.add(x, bb)
}

/// Instance normalization over the spatial axes of each (sample, channel),
/// with affine scale/shift.
pub struct InstanceNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub ch: usize,
    pub eps: f64,
}

impl InstanceNorm2d {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, ch: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), crate::Arr::from_elem(ndarray::IxDyn(&[ch]), S::one()));
        let beta = store.register(format!("{name}.beta"), crate::Arr::zeros(ndarray::IxDyn(&[ch])));
        InstanceNorm2d { gamma, beta, ch, eps: 1e-5 }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let shape = tape.shape(x);
        let (h, w) = (shape[2], shape[3]);
        let inv_hw = S::one() / S::of_usize(h * w);

        let s3 = tape.sum_axis(x, 3);
        let s23 = tape.sum_axis(s3, 2);
        let mean = tape.scale(s23, inv_hw); // [n,c,1,1]
        let mean_b = tape.broadcast(mean, &shape);
        let centered = tape.sub(x, mean_b);

        let sq = tape.mul(centered, centered);
        let v3 = tape.sum_axis(sq, 3);
        let v23 = tape.sum_axis(v3, 2);
        let var = tape.scale(v23, inv_hw); // biased variance
        let std = {
            let ve = tape.affine(var, S::one(), S::of(self.eps));
            tape.sqrt(ve)
        };
        let std_b = tape.broadcast(std, &shape);
        let normed = tape.div(centered, std_b);

        let g = tape.reshape(bound.var(self.gamma), &[1, self.ch, 1, 1]);
        let gb = tape.broadcast(g, &shape);
        let scaled = tape.mul(normed, gb);
        let b = tape.reshape(bound.var(self.beta), &[1, self.ch, 1, 1]);
        let bb = tape.broadcast(b, &shape);
        tape.add(scaled, bb)
    }
}

/// Batch normalization with running statistics (for the residual encoder).
pub struct BatchNorm2d<S: Scalar> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub ch: usize,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, ch: usize) -> Self {
        let gamma = store.register(format!("{name}.gamma"), crate::Arr::from_elem(ndarray::IxDyn(&[ch]), S::one()));
        let beta = store.register(format!("{name}.beta"), crate::Arr::zeros(ndarray::IxDyn(&[ch])));
        BatchNorm2d {
            name: name.to_string(),
            gamma,
            beta,
            ch,
            eps: 1e-5,
            momentum: 0.1,
            running_mean: vec![S::zero(); ch],
            running_var: vec![S::one(); ch],
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<S>, bound: &Bound, x: Var, training: bool) -> Var {
        let shape = tape.shape(x);
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let count = n * h * w;

        let (mean, var) = if training {
            let inv = S::one() / S::of_usize(count);
            let s3 = tape.sum_axis(x, 3);
            let s23 = tape.sum_axis(s3, 2);
            let s023 = tape.sum_axis(s23, 0);
            let mean = tape.scale(s023, inv); // [1,c,1,1]
            let mean_b = tape.broadcast(mean, &shape);
            let c = tape.sub(x, mean_b);
            let sq = tape.mul(c, c);
            let v3 = tape.sum_axis(sq, 3);
            let v23 = tape.sum_axis(v3, 2);
            let v023 = tape.sum_axis(v23, 0);
            let var = tape.scale(v023, inv);
            // update running buffers (unbiased variance, torch convention)
            let unbias = if count > 1 { count as f64 / (count as f64 - 1.0) } else { 1.0 };
            let mom = S::of(self.momentum);
            let keep = S::one() - mom;
            for ci in 0..self.ch {
                let m = tape.value(mean)[[0, ci, 0, 0]];
                let v = tape.value(var)[[0, ci, 0, 0]] * S::of(unbias);
                self.running_mean[ci] = keep * self.running_mean[ci] + mom * m;
                self.running_var[ci] = keep * self.running_var[ci] + mom * v;
            }
            (mean, var)
        } else {
            let m = ndarray::Array::from_shape_vec((1, self.ch, 1, 1), self.running_mean.clone())
                .unwrap()
                .into_dyn();
            let v = ndarray::Array::from_shape_vec((1, self.ch, 1, 1), self.running_var.clone())
                .unwrap()
                .into_dyn();
            (tape.constant(m), tape.constant(v))
        };

        let mean_b = tape.broadcast(mean, &shape);
        let centered = tape.sub(x, mean_b);
        let ve = tape.affine(var, S::one(), S::of(self.eps));
        let std = tape.sqrt(ve);
        let std_b = tape.broadcast(std, &shape);
        let normed = tape.div(centered, std_b);

        let g = tape.reshape(bound.var(self.gamma), &[1, self.ch, 1, 1]);
        let gb = tape.broadcast(g, &shape);
        let scaled = tape.mul(normed, gb);
        let b = tape.reshape(bound.var(self.beta), &[1, self.ch, 1, 1]);
        let bb = tape.broadcast(b, &shape);
        tape.add(scaled, bb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::IxDyn;

    #[test]
    fn instance_norm_normalizes_each_channel() {
        let mut store = ParamStore::<f64>::new();
        let inorm = InstanceNorm2d::new(&mut store, "in", 2);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.constant(crate::Arr::from_shape_fn(IxDyn(&[1, 2, 4, 4]), |ix| {
            (ix[1] * 10 + ix[2] * 4 + ix[3]) as f64
        }));
        let y = inorm.forward(&mut tape, &bound, x);
        let yv = tape.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .map(|(i, j)| yv[[0, c, i, j]])
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / 16.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn linear_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = crate::rng::stream(1, &[]);
        let lin = Linear::new(&mut store, &mut rng, "l", 5, 3);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let x = tape.constant(crate::Arr::zeros(IxDyn(&[7, 5])));
        let y = lin.forward(&mut tape, &bound, x);
        assert_eq!(tape.shape(y), vec![7, 3]);
    }
}
