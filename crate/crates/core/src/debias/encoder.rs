//! The trainable triple of the debiasing method: encoder E, classifier C
//! and projection head H.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DebiasError;
use crate::autodiff::{Tape, Var};
use crate::nn::layers::{BatchNorm2d, Conv2d, Linear};
use crate::nn::{store_io, Bound, Init, ParamStore};
use crate::scalar::Scalar;
use crate::Arr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Three hidden layers of width `hidden_dim` on the flattened image.
    Mlp,
    /// Randomly initialized 18-layer residual network.
    ResNet18,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub kind: EncoderKind,
    /// (channels, height, width) of the input.
    pub in_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub hidden_dim: usize,
    /// Representation width fed to classifier and projector.
    pub repr_dim: usize,
    /// Projection head widths from input to output.
    pub proj_dims: Vec<usize>,
}

impl EncoderArch {
    pub fn mlp(h: usize, w: usize, num_classes: usize) -> Self {
        EncoderArch {
            kind: EncoderKind::Mlp,
            in_shape: (3, h, w),
            num_classes,
            hidden_dim: 100,
            repr_dim: 100,
            proj_dims: vec![100, 100],
        }
    }

    pub fn resnet18(h: usize, w: usize, num_classes: usize) -> Self {
        EncoderArch {
            kind: EncoderKind::ResNet18,
            in_shape: (3, h, w),
            num_classes,
            hidden_dim: 0,
            repr_dim: 512,
            proj_dims: vec![512, 512, 128],
        }
    }

    pub fn for_kind(kind: EncoderKind, h: usize, w: usize, num_classes: usize) -> Self {
        match kind {
            EncoderKind::Mlp => Self::mlp(h, w, num_classes),
            EncoderKind::ResNet18 => Self::resnet18(h, w, num_classes),
        }
    }
}

pub struct MlpEncoder {
    layers: Vec<Linear>,
    in_dim: usize,
}

impl MlpEncoder {
    fn new<S: Scalar>(store: &mut ParamStore<S>, rng: &mut impl rand::Rng, arch: &EncoderArch) -> Self {
        let (c, h, w) = arch.in_shape;
        let in_dim = c * h * w;
        let mut layers = Vec::new();
        let mut d = in_dim;
        for i in 0..3 {
            layers.push(Linear::new(store, rng, &format!("e.fc{i}"), d, arch.hidden_dim));
            d = arch.hidden_dim;
        }
        MlpEncoder { layers, in_dim }
    }

    fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Var {
        let n = tape.shape(x)[0];
        let mut h = tape.reshape(x, &[n, self.in_dim]);
        for l in &self.layers {
            h = l.forward(tape, bound, h);
            h = tape.relu(h);
        }
        h
    }
}

struct BasicBlock<S: Scalar> {
    c1: Conv2d,
    b1: BatchNorm2d<S>,
    c2: Conv2d,
    b2: BatchNorm2d<S>,
    down: Option<(Conv2d, BatchNorm2d<S>)>,
}

impl<S: Scalar> BasicBlock<S> {
    fn new(
        store: &mut ParamStore<S>,
        rng: &mut impl rand::Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    ) -> Self {
        let init = Init::HeNormal { fan_in: in_ch * 9 };
        let c1 = Conv2d::new(store, rng, &format!("{name}.c1"), in_ch, out_ch, 3, stride, 1, init);
        let b1 = BatchNorm2d::new(store, &format!("{name}.b1"), out_ch);
        let init2 = Init::HeNormal { fan_in: out_ch * 9 };
        let c2 = Conv2d::new(store, rng, &format!("{name}.c2"), out_ch, out_ch, 3, 1, 1, init2);
        let b2 = BatchNorm2d::new(store, &format!("{name}.b2"), out_ch);
        let down = if stride != 1 || in_ch != out_ch {
            let dc = Conv2d::new(
                store,
                rng,
                &format!("{name}.down"),
                in_ch,
                out_ch,
                1,
                stride,
                0,
                Init::HeNormal { fan_in: in_ch },
            );
            let db = BatchNorm2d::new(store, &format!("{name}.down_bn"), out_ch);
            Some((dc, db))
        } else {
            None
        };
        BasicBlock { c1, b1, c2, b2, down }
    }

    fn forward(&mut self, tape: &mut Tape<S>, bound: &Bound, x: Var, training: bool) -> Var {
        let mut h = self.c1.forward(tape, bound, x);
        h = self.b1.forward(tape, bound, h, training);
        h = tape.relu(h);
        h = self.c2.forward(tape, bound, h);
        h = self.b2.forward(tape, bound, h, training);
        let skip = match &mut self.down {
            Some((dc, db)) => {
                let d = dc.forward(tape, bound, x);
                db.forward(tape, bound, d, training)
            }
            None => x,
        };
        let sum = tape.add(h, skip);
        tape.relu(sum)
    }
}

pub struct ResNet18<S: Scalar> {
    stem: Conv2d,
    stem_bn: BatchNorm2d<S>,
    blocks: Vec<BasicBlock<S>>,
}

impl<S: Scalar> ResNet18<S> {
    fn new(store: &mut ParamStore<S>, rng: &mut impl rand::Rng) -> Self {
        let stem = Conv2d::new(store, rng, "e.stem", 3, 64, 3, 1, 1, Init::HeNormal { fan_in: 27 });
        let stem_bn = BatchNorm2d::new(store, "e.stem_bn", 64);
        let mut blocks = Vec::new();
        let plan: [(usize, usize, usize); 4] = [(64, 64, 1), (64, 128, 2), (128, 256, 2), (256, 512, 2)];
        for (li, &(in_ch, out_ch, stride)) in plan.iter().enumerate() {
            blocks.push(BasicBlock::new(store, rng, &format!("e.l{li}a"), in_ch, out_ch, stride));
            blocks.push(BasicBlock::new(store, rng, &format!("e.l{li}b"), out_ch, out_ch, 1));
        }
        ResNet18 { stem, stem_bn, blocks }
    }

    fn forward(&mut self, tape: &mut Tape<S>, bound: &Bound, x: Var, training: bool) -> Var {
        let mut h = self.stem.forward(tape, bound, x);
        h = self.stem_bn.forward(tape, bound, h, training);
        h = tape.relu(h);
        for b in &mut self.blocks {
            h = b.forward(tape, bound, h, training);
        }
        // global average pool
        let shape = tape.shape(h);
        let (n, c, hh, ww) = (shape[0], shape[1], shape[2], shape[3]);
        let s3 = tape.sum_axis(h, 3);
        let s23 = tape.sum_axis(s3, 2);
        let pooled = tape.scale(s23, S::one() / S::of_usize(hh * ww));
        tape.reshape(pooled, &[n, c])
    }

    fn buffers(&self) -> Vec<(String, Vec<S>)> {
        let mut out = vec![
            (format!("{}.running_mean", self.stem_bn.name), self.stem_bn.running_mean.clone()),
            (format!("{}.running_var", self.stem_bn.name), self.stem_bn.running_var.clone()),
        ];
        for b in &self.blocks {
            for bn in [&b.b1, &b.b2].into_iter().chain(b.down.iter().map(|(_, db)| db)) {
                out.push((format!("{}.running_mean", bn.name), bn.running_mean.clone()));
                out.push((format!("{}.running_var", bn.name), bn.running_var.clone()));
            }
        }
        out
    }

    fn set_buffers(&mut self, map: &std::collections::HashMap<String, Vec<S>>) {
        let mut apply = |bn: &mut BatchNorm2d<S>| {
            if let Some(v) = map.get(&format!("{}.running_mean", bn.name)) {
                bn.running_mean = v.clone();
            }
            if let Some(v) = map.get(&format!("{}.running_var", bn.name)) {
                bn.running_var = v.clone();
            }
        };
        apply(&mut self.stem_bn);
        for b in &mut self.blocks {
            apply(&mut b.b1);
            apply(&mut b.b2);
            if let Some((_, db)) = &mut b.down {
                apply(db);
            }
        }
    }
}

pub enum Encoder<S: Scalar> {
    Mlp(MlpEncoder),
    ResNet(ResNet18<S>),
}

/// Encoder + classifier + projection head sharing one parameter store.
pub struct DebiasModel<S: Scalar> {
    pub store: ParamStore<S>,
    pub encoder: Encoder<S>,
    pub classifier: Linear,
    pub projector: Vec<Linear>,
    pub arch: EncoderArch,
}

impl<S: Scalar> DebiasModel<S> {
    pub fn new(arch: EncoderArch, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream(seed, &[crate::rng::tag::MODEL_INIT]);
        let encoder = match arch.kind {
            EncoderKind::Mlp => Encoder::Mlp(MlpEncoder::new(&mut store, &mut rng, &arch)),
            EncoderKind::ResNet18 => Encoder::ResNet(ResNet18::new(&mut store, &mut rng)),
        };
        let classifier = Linear::new(&mut store, &mut rng, "c.out", arch.repr_dim, arch.num_classes);
        let mut projector = Vec::new();
        for i in 0..arch.proj_dims.len() - 1 {
            projector.push(Linear::new(
                &mut store,
                &mut rng,
                &format!("h.fc{i}"),
                arch.proj_dims[i],
                arch.proj_dims[i + 1],
            ));
        }
        DebiasModel { store, encoder, classifier, projector, arch }
    }

    /// Encode a [-1,1] NCHW batch to representations.
    pub fn encode(&mut self, tape: &mut Tape<S>, bound: &Bound, x: Var, training: bool) -> Var {
        match &mut self.encoder {
            Encoder::Mlp(m) => m.forward(tape, bound, x),
            Encoder::ResNet(r) => r.forward(tape, bound, x, training),
        }
    }

    pub fn classify(&self, tape: &mut Tape<S>, bound: &Bound, repr: Var) -> Var {
        self.classifier.forward(tape, bound, repr)
    }

    /// Projection head: linear layers with relu between (none after last).
    pub fn project(&self, tape: &mut Tape<S>, bound: &Bound, repr: Var) -> Var {
        let mut h = repr;
        for (i, l) in self.projector.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = l.forward(tape, bound, h);
        }
        h
    }

    /// Forward-only class logits for an input batch.
    pub fn logits(&mut self, x: &Arr<S>, training: bool) -> Arr<S> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let r = self.encode(&mut tape, &bound, xv, training);
        let l = self.classify(&mut tape, &bound, r);
        tape.value(l).clone()
    }

    fn buffers(&self) -> Vec<(String, Vec<S>)> {
        match &self.encoder {
            Encoder::Mlp(_) => Vec::new(),
            Encoder::ResNet(r) => r.buffers(),
        }
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<(), DebiasError> {
        let mut tensors: Vec<(String, Arr<S>)> = self
            .store
            .iter()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect();
        for (name, buf) in self.buffers() {
            tensors.push((format!("buffers.{name}"), Arr::from_shape_vec(ndarray::IxDyn(&[buf.len()]), buf).unwrap()));
        }
        let refs: Vec<(String, &Arr<S>)> = tensors.iter().map(|(n, v)| (n.clone(), v)).collect();
        let full_meta = serde_json::json!({ "arch": self.arch, "extra": meta });
        store_io::save_tensors(path, &refs, full_meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), DebiasError> {
        let (tensors, meta) = store_io::load_tensors::<S>(path)?;
        let arch: EncoderArch = serde_json::from_value(meta["arch"].clone())
            .map_err(|e| DebiasError::Config(format!("bad checkpoint meta: {e}")))?;
        let mut model = Self::new(arch, 0);
        let mut by_name: std::collections::HashMap<String, Arr<S>> = tensors.into_iter().collect();
        let values: Result<Vec<Arr<S>>, DebiasError> = model
            .store
            .iter()
            .map(|(name, _)| {
                by_name
                    .remove(name)
                    .ok_or_else(|| DebiasError::Config(format!("checkpoint missing tensor {name}")))
            })
            .collect();
        model.store.load_values(values?);
        let buffer_map: std::collections::HashMap<String, Vec<S>> = by_name
            .into_iter()
            .filter_map(|(name, arr)| {
                name.strip_prefix("buffers.")
                    .map(|stripped| (stripped.to_string(), arr.iter().copied().collect()))
            })
            .collect();
        if let Encoder::ResNet(r) = &mut model.encoder {
            r.set_buffers(&buffer_map);
        }
        Ok((model, meta["extra"].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn mlp_shapes_match_profile() {
        let arch = EncoderArch::mlp(28, 28, 10);
        let mut model = DebiasModel::<f32>::new(arch, 1);
        let x = Arr::<f32>::zeros(IxDyn(&[4, 3, 28, 28]));
        let logits = model.logits(&x, false);
        assert_eq!(logits.shape(), &[4, 10]);

        let mut tape = Tape::new();
        let bound = model.store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let r = model.encode(&mut tape, &bound, xv, false);
        assert_eq!(tape.shape(r), vec![4, 100]);
        let z = model.project(&mut tape, &bound, r);
        assert_eq!(tape.shape(z), vec![4, 100]);
    }

    #[test]
    fn resnet_shapes_match_profile() {
        let arch = EncoderArch::resnet18(32, 32, 10);
        let mut model = DebiasModel::<f32>::new(arch, 1);
        let x = Arr::<f32>::zeros(IxDyn(&[2, 3, 32, 32]));
        let mut tape = Tape::new();
        let bound = model.store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let r = model.encode(&mut tape, &bound, xv, false);
        assert_eq!(tape.shape(r), vec![2, 512]);
        let z = model.project(&mut tape, &bound, r);
        assert_eq!(tape.shape(z), vec![2, 128]);
        let l = model.classify(&mut tape, &bound, r);
        assert_eq!(tape.shape(l), vec![2, 10]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_logits() {
        let arch = EncoderArch::mlp(28, 28, 10);
        let mut model = DebiasModel::<f32>::new(arch, 5);
        let mut rng = crate::rng::stream(6, &[]);
        let x = Arr::<f32>::from_shape_fn(IxDyn(&[3, 3, 28, 28]), |_| {
            rand::Rng::gen_range(&mut rng, -1.0..1.0)
        });
        let before = model.logits(&x, false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        model.save(&path, serde_json::json!({})).unwrap();
        let (mut loaded, _) = DebiasModel::<f32>::load(&path).unwrap();
        assert_eq!(before, loaded.logits(&x, false));
    }
}
