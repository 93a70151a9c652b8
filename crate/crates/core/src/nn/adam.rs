//! Adam optimizer over a [`ParamStore`].

use super::ParamStore;
use crate::scalar::Scalar;
use crate::Arr;

pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: Vec<Arr<S>>,
    v: Vec<Arr<S>>,
}

impl<S: Scalar> Adam<S> {
    /// Default-parameter Adam (`beta1 = 0.9`).
    pub fn new(store: &ParamStore<S>, lr: f64) -> Self {
        Self::with_betas(store, lr, 0.9, 0.999)
    }

    /// GAN-style Adam with custom betas.
    pub fn with_betas(store: &ParamStore<S>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Arr<S>> = store.iter().map(|(_, v)| Arr::zeros(v.raw_dim())).collect();
        Adam {
            lr: S::of(lr),
            beta1: S::of(beta1),
            beta2: S::of(beta2),
            eps: S::of(1e-8),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = S::of(lr);
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update; `grads` must align with the store's registration order.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &[Arr<S>]) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);
        for i in 0..grads.len() {
            let g = grads[i].as_slice().expect("contiguous grad");
            let m = self.m[i].as_slice_mut().expect("contiguous");
            let v = self.v[i].as_slice_mut().expect("contiguous");
            let p = store.values[i].as_slice_mut().expect("contiguous");
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (S::one() - b1) * g[j];
                v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Moment tensors for checkpointing, paired with param names.
    pub fn state(&self) -> (&[Arr<S>], &[Arr<S>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn load_state(&mut self, m: Vec<Arr<S>>, v: Vec<Arr<S>>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    /// Adam on f(x) = x^2 converges toward 0.
    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("x", Arr::from_elem(IxDyn(&[1]), 3.0));
        let mut opt = Adam::new(&store, 0.1);
        for _ in 0..300 {
            let x = store.value(id)[[0]];
            let g = Arr::from_elem(IxDyn(&[1]), 2.0 * x);
            opt.step(&mut store, &[g]);
        }
        assert!(store.value(id)[[0]].abs() < 1e-2);
    }
}
