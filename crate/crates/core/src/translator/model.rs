//! Multi-domain translation architecture: conditional generator with
//! residual bottleneck, and a patch discriminator with an auxiliary
//! domain-classification head.

use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::nn::layers::{Conv2d, ConvTranspose2d, InstanceNorm2d};
use crate::nn::{Bound, Init, ParamStore};
use crate::scalar::Scalar;
use crate::Arr;

/// Architecture hyperparameters, serialized into the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_size: usize,
    pub num_domains: usize,
    /// Base channel width of the generator (doubles at each downsample).
    pub g_base_channels: usize,
    /// Residual blocks in the generator bottleneck.
    pub g_blocks: usize,
    /// Strided convolutions in the discriminator.
    pub d_repeat_num: usize,
    /// Base channel width of the discriminator.
    pub d_base_channels: usize,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_size % 4 != 0 {
            return Err(format!("image_size {} must be divisible by 4", self.image_size));
        }
        if self.num_domains < 1 {
            return Err("num_domains must be >= 1".into());
        }
        if self.g_blocks == 0 || self.d_repeat_num == 0 {
            return Err("g_blocks and d_repeat_num must be >= 1".into());
        }
        if self.image_size >> self.d_repeat_num == 0 {
            return Err(format!(
                "d_repeat_num {} collapses a {}px image below 1px",
                self.d_repeat_num, self.image_size
            ));
        }
        Ok(())
    }
}

const GAN_INIT: Init = Init::Normal { std: 0.02 };

struct ResBlock {
    c1: Conv2d,
    n1: InstanceNorm2d,
    c2: Conv2d,
    n2: InstanceNorm2d,
}

impl ResBlock {
    fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, name: &str, ch: usize) -> Self {
        ResBlock {
            c1: Conv2d::new(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1, GAN_INIT),
            n1: InstanceNorm2d::new(store, &format!("{name}.n1"), ch),
            c2: Conv2d::new(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1, GAN_INIT),
            n2: InstanceNorm2d::new(store, &format!("{name}.n2"), ch),
        }
    }

    fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let h = self.c1.forward(tape, bound, x);
        let h = self.n1.forward(tape, bound, h);
        let h = tape.relu(h);
        let h = self.c2.forward(tape, bound, h);
        let h = self.n2.forward(tape, bound, h);
        tape.add(x, h)
    }
}

/// Conditional generator: input image concatenated with a one-hot domain
/// map, two downsamples, residual bottleneck, two upsamples, tanh output.
pub struct Generator {
    conv_in: Conv2d,
    n_in: InstanceNorm2d,
    down1: Conv2d,
    n_d1: InstanceNorm2d,
    down2: Conv2d,
    n_d2: InstanceNorm2d,
    blocks: Vec<ResBlock>,
    up1: ConvTranspose2d,
    n_u1: InstanceNorm2d,
    up2: ConvTranspose2d,
    n_u2: InstanceNorm2d,
    conv_out: Conv2d,
    num_domains: usize,
}

impl Generator {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, arch: &ArchConfig) -> Self {
        let c = arch.g_base_channels;
        let k = arch.num_domains;
        let blocks = (0..arch.g_blocks)
            .map(|i| ResBlock::new(store, rng, &format!("g.res{i}"), 4 * c))
            .collect();
        Generator {
            conv_in: Conv2d::new(store, rng, "g.conv_in", 3 + k, c, 7, 1, 3, GAN_INIT),
            n_in: InstanceNorm2d::new(store, "g.n_in", c),
            down1: Conv2d::new(store, rng, "g.down1", c, 2 * c, 4, 2, 1, GAN_INIT),
            n_d1: InstanceNorm2d::new(store, "g.n_d1", 2 * c),
            down2: Conv2d::new(store, rng, "g.down2", 2 * c, 4 * c, 4, 2, 1, GAN_INIT),
            n_d2: InstanceNorm2d::new(store, "g.n_d2", 4 * c),
            blocks,
            up1: ConvTranspose2d::new(store, rng, "g.up1", 4 * c, 2 * c, 4, 2, 1, GAN_INIT),
            n_u1: InstanceNorm2d::new(store, "g.n_u1", 2 * c),
            up2: ConvTranspose2d::new(store, rng, "g.up2", 2 * c, c, 4, 2, 1, GAN_INIT),
            n_u2: InstanceNorm2d::new(store, "g.n_u2", c),
            conv_out: Conv2d::new(store, rng, "g.conv_out", c, 3, 7, 1, 3, GAN_INIT),
            num_domains: k,
        }
    }

    /// x: [n,3,h,w] in [-1,1]; one target domain per sample -> same-shape
    /// image in [-1,1].
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        x: Var,
        targets: &[usize],
    ) -> Var {
        let shape = tape.shape(x);
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        assert_eq!(targets.len(), n, "one target domain per sample");

        let mut onehot = Arr::<S>::zeros(IxDyn(&[n, self.num_domains, h, w]));
        for (i, &d) in targets.iter().enumerate() {
            onehot
                .index_axis_mut(ndarray::Axis(0), i)
                .index_axis_mut(ndarray::Axis(0), d)
                .fill(S::one());
        }
        let dom = tape.constant(onehot);
        let inp = tape.concat(&[x, dom], 1);

        let mut hxs = self.conv_in.forward(tape, bound, inp);
        hxs = self.n_in.forward(tape, bound, hxs);
        hxs = tape.relu(hxs);
        hxs = self.down1.forward(tape, bound, hxs);
        hxs = self.n_d1.forward(tape, bound, hxs);
        hxs = tape.relu(hxs);
        hxs = self.down2.forward(tape, bound, hxs);
        hxs = self.n_d2.forward(tape, bound, hxs);
        hxs = tape.relu(hxs);
        for b in &self.blocks {
            hxs = b.forward(tape, bound, hxs);
        }
        hxs = self.up1.forward(tape, bound, hxs);
        hxs = self.n_u1.forward(tape, bound, hxs);
        hxs = tape.relu(hxs);
        hxs = self.up2.forward(tape, bound, hxs);
        hxs = self.n_u2.forward(tape, bound, hxs);
        hxs = tape.relu(hxs);
        hxs = self.conv_out.forward(tape, bound, hxs);
        tape.tanh(hxs)
    }
}

/// Patch discriminator with a real/fake head (`src`) and a domain
/// classification head (`cls`).
pub struct Discriminator {
    convs: Vec<Conv2d>,
    src: Conv2d,
    cls: Conv2d,
    num_domains: usize,
}

impl Discriminator {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl Rng, arch: &ArchConfig) -> Self {
        let mut convs = Vec::new();
        let mut in_ch = 3;
        let mut ch = arch.d_base_channels;
        let mut size = arch.image_size;
        for i in 0..arch.d_repeat_num {
            convs.push(Conv2d::new(store, rng, &format!("d.conv{i}"), in_ch, ch, 4, 2, 1, GAN_INIT));
            in_ch = ch;
            ch *= 2;
            size = (size + 2 - 4) / 2 + 1;
        }
        Discriminator {
            convs,
            src: Conv2d::new(store, rng, "d.src", in_ch, 1, 3, 1, 1, GAN_INIT),
            cls: Conv2d::new(store, rng, "d.cls", in_ch, arch.num_domains, size, 1, 0, GAN_INIT),
            num_domains: arch.num_domains,
        }
    }

    /// x: [n,3,h,w] -> (patch scores [n,1,h',w'], domain logits [n,K]).
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> (Var, Var) {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(tape, bound, h);
            h = tape.leaky_relu(h, S::of(0.01));
        }
        let src = self.src.forward(tape, bound, h);
        let cls = self.cls.forward(tape, bound, h);
        let n = tape.shape(cls)[0];
        let cls = tape.reshape(cls, &[n, self.num_domains]);
        (src, cls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            image_size: 28,
            num_domains: 10,
            g_base_channels: 4,
            g_blocks: 2,
            d_repeat_num: 4,
            d_base_channels: 4,
        }
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let arch = tiny_arch();
        let mut store = ParamStore::<f32>::new();
        let mut rng = stream(1, &[]);
        let g = Generator::new(&mut store, &mut rng, &arch);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(Arr::from_shape_fn(IxDyn(&[2, 3, 28, 28]), |_| 0.3f32));
        let y = g.forward(&mut tape, &bound, x, &[1, 7]);
        assert_eq!(tape.shape(y), vec![2, 3, 28, 28]);
        assert!(tape.value(y).iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn discriminator_emits_k_logits() {
        let arch = tiny_arch();
        let mut store = ParamStore::<f32>::new();
        let mut rng = stream(2, &[]);
        let d = Discriminator::new(&mut store, &mut rng, &arch);
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let x = tape.constant(Arr::from_shape_fn(IxDyn(&[3, 3, 28, 28]), |_| -0.1f32));
        let (src, cls) = d.forward(&mut tape, &bound, x);
        assert_eq!(tape.shape(cls), vec![3, 10]);
        assert_eq!(tape.shape(src)[0], 3);
        assert_eq!(tape.shape(src)[1], 1);
    }

    #[test]
    fn arch_validation_rejects_over_deep_discriminator() {
        let mut arch = tiny_arch();
        arch.d_repeat_num = 6;
        assert!(arch.validate().is_err());
    }
}
