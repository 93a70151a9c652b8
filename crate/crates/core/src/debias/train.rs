//! The training loops: contrastive debiasing (Algorithm-style step) and
//! the vanilla cross-entropy baseline sharing the same encoder, schedule
//! and metrics schema.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use super::augment::augment;
use super::encoder::{DebiasModel, EncoderArch};
use super::nt_xent::{block_pairing, nt_xent_loss, sample_target_domain};
use super::views::ViewSource;
use super::{Ablation, DebiasError, TrainConfig};
use crate::autodiff::Tape;
use crate::datasets::BiasedDataset;
use crate::eval::{EpochRecord, RunMetrics};
use crate::imgproc::ImageF32;
use crate::nn::adam::Adam;
use crate::nn::losses::softmax_cross_entropy_rows;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::Arr;

/// Per-step loss components, reported as per-sample averages so that
/// `total/n = ce_orig + ce_trans + lambda * cl`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepLosses {
    pub ce_orig: f64,
    pub ce_trans: f64,
    pub cl: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        self.ce_orig.is_finite() && self.ce_trans.is_finite() && self.cl.is_finite()
    }
}

/// Everything a step computed, for oracle recomposition checks.
pub struct StepDetail<S: Scalar> {
    /// First view in model domain [-1,1].
    pub view1: Arr<S>,
    /// Second (bias-transformed) view in model domain [-1,1].
    pub view2: Arr<S>,
    pub labels: Vec<usize>,
    pub targets: Vec<usize>,
    /// Stacked projections [2n, d] (block layout), when the contrastive
    /// term was computed.
    pub z: Option<Arr<S>>,
    /// Total objective value (sum over the batch).
    pub total: f64,
}

/// Dataset samples at `indices` as a [0,1] NCHW batch plus labels.
pub fn batch01<S: Scalar>(dataset: &BiasedDataset, indices: &[usize]) -> (Arr<S>, Vec<usize>) {
    let first = &dataset.samples[indices[0]].image;
    let (h, w) = (first.h, first.w);
    let mut x = Arr::<S>::zeros(IxDyn(&[indices.len(), 3, h, w]));
    let mut labels = Vec::with_capacity(indices.len());
    for (bi, &si) in indices.iter().enumerate() {
        let img = &dataset.samples[si].image;
        for ch in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    x[[bi, ch, y, xx]] = S::of(img.get(y, xx, ch) as f64 / 255.0);
                }
            }
        }
        labels.push(dataset.samples[si].class_label);
    }
    (x, labels)
}

fn row_to_image<S: Scalar>(batch: &Arr<S>, row: usize) -> ImageF32 {
    let shape = batch.shape();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut img = ImageF32::new(h, w, c);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, ch, batch[[row, ch, y, x]].as_f64() as f32);
            }
        }
    }
    img
}

fn image_into_row<S: Scalar>(img: &ImageF32, batch: &mut Arr<S>, row: usize) {
    for ch in 0..img.c {
        for y in 0..img.h {
            for x in 0..img.w {
                batch[[row, ch, y, x]] = S::of(img.get(y, x, ch) as f64);
            }
        }
    }
}

/// Apply one augmentation stream to a whole [0,1] batch.
fn augment_batch<S: Scalar>(
    x01: &Arr<S>,
    policy: &super::AugmentationPolicy,
    seed: u64,
    stream_tags: &[u64],
) -> Arr<S> {
    if policy.is_identity() {
        return x01.clone();
    }
    let n = x01.shape()[0];
    let out_side = policy.crop.output;
    let mut out = Arr::<S>::zeros(IxDyn(&[n, x01.shape()[1], out_side, out_side]));
    for row in 0..n {
        let img = row_to_image(x01, row);
        let mut tags = stream_tags.to_vec();
        tags.push(row as u64);
        let mut rng = stream(seed, &tags);
        let aug = augment(&img, policy, &mut rng);
        image_into_row(&aug, &mut out, row);
    }
    out
}

#[inline]
fn to_model_domain<S: Scalar>(x01: &Arr<S>) -> Arr<S> {
    x01.mapv(|v| v + v - S::one())
}

/// Trainer state for the debiasing objective.
pub struct DebiasTrainer<S: Scalar> {
    pub model: DebiasModel<S>,
    pub config: TrainConfig,
    pub view_source: ViewSource<S>,
    adam: Adam<S>,
}

impl<S: Scalar> DebiasTrainer<S> {
    pub fn new(
        model: DebiasModel<S>,
        config: TrainConfig,
        view_source: ViewSource<S>,
    ) -> Result<Self, DebiasError> {
        config.validate()?;
        if view_source.num_domains() != model.arch.num_classes {
            return Err(DebiasError::Config(format!(
                "generator has {} domains but dataset has {} classes",
                view_source.num_domains(),
                model.arch.num_classes
            )));
        }
        let adam = Adam::new(&model.store, config.lr);
        Ok(DebiasTrainer { model, config, view_source, adam })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.set_lr(lr);
    }

    /// One optimizer update on (E, C, H). The generator (view source) is
    /// read-only: its outputs enter the graph as constants.
    pub fn cdvg_step(
        &mut self,
        dataset: &BiasedDataset,
        indices: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<(StepLosses, StepDetail<S>), DebiasError> {
        let n = indices.len();
        let k = self.model.arch.num_classes;
        let cfg = self.config.clone();
        let (x01, labels) = batch01::<S>(dataset, indices);

        let mut target_rng = stream(cfg.seed, &[tag::TRAIN_STEP, epoch as u64, step as u64, 0]);
        let targets: Vec<usize> = (0..n)
            .map(|_| sample_target_domain(k, &mut target_rng))
            .collect::<Result<_, _>>()?;

        let x2_01 = self.view_source.views01(&x01, indices, &targets)?;
        let v1_01 = augment_batch(&x01, &cfg.augment, cfg.seed, &[tag::TRAIN_STEP, epoch as u64, step as u64, 1]);
        let v2_01 = augment_batch(&x2_01, &cfg.augment, cfg.seed, &[tag::TRAIN_STEP, epoch as u64, step as u64, 2]);
        let view1 = to_model_domain(&v1_01);
        let view2 = to_model_domain(&v2_01);

        let use_cl = cfg.ablation != Ablation::NoCl && cfg.lambda_cl > 0.0;

        let mut tape = Tape::<S>::new();
        let bound = self.model.store.bind(&mut tape);
        let x1v = tape.constant(view1.clone());
        let x2v = tape.constant(view2.clone());

        let r1 = self.model.encode(&mut tape, &bound, x1v, true);
        let logits1 = self.model.classify(&mut tape, &bound, r1);
        let ce1_rows = softmax_cross_entropy_rows(&mut tape, logits1, &labels);
        let ce1 = tape.sum(ce1_rows);

        let r2 = self.model.encode(&mut tape, &bound, x2v, true);
        let logits2 = self.model.classify(&mut tape, &bound, r2);
        let ce2_rows = softmax_cross_entropy_rows(&mut tape, logits2, &labels);
        let ce2 = tape.sum(ce2_rows);

        let mut total = tape.add(ce1, ce2);
        let mut cl_value = 0.0;
        let mut z_detail = None;
        if use_cl {
            let z1 = self.model.project(&mut tape, &bound, r1);
            let z2 = self.model.project(&mut tape, &bound, r2);
            let z = tape.concat(&[z1, z2], 0);
            let cl = nt_xent_loss(&mut tape, z, cfg.temperature, &block_pairing(2 * n))?;
            cl_value = tape.scalar_value(cl).as_f64();
            z_detail = Some(tape.value(z).clone());
            let weighted = tape.scale(cl, S::of(cfg.lambda_cl));
            total = tape.add(total, weighted);
        }

        let losses = StepLosses {
            ce_orig: tape.scalar_value(ce1).as_f64() / n as f64,
            ce_trans: tape.scalar_value(ce2).as_f64() / n as f64,
            cl: cl_value / n as f64,
        };
        if !losses.is_finite() {
            return Err(DebiasError::NonFinite { epoch, step, losses });
        }

        let total_value = tape.scalar_value(total).as_f64();
        let grads: Vec<Arr<S>> = {
            let gvars = tape.grad(total, bound.all());
            gvars.into_iter().map(|g| tape.value(g).clone()).collect()
        };
        self.adam.step(&mut self.model.store, &grads);

        Ok((
            losses,
            StepDetail { view1, view2, labels, targets, z: z_detail, total: total_value },
        ))
    }

    /// One plain cross-entropy update on the raw batch (no views, no
    /// augmentation, no projection head).
    pub fn vanilla_step(
        &mut self,
        dataset: &BiasedDataset,
        indices: &[usize],
        epoch: usize,
        step: usize,
    ) -> Result<StepLosses, DebiasError> {
        let n = indices.len();
        let (x01, labels) = batch01::<S>(dataset, indices);
        let x = to_model_domain(&x01);
        let mut tape = Tape::<S>::new();
        let bound = self.model.store.bind(&mut tape);
        let xv = tape.constant(x);
        let r = self.model.encode(&mut tape, &bound, xv, true);
        let logits = self.model.classify(&mut tape, &bound, r);
        let ce_rows = softmax_cross_entropy_rows(&mut tape, logits, &labels);
        let ce = tape.sum(ce_rows);
        let losses = StepLosses {
            ce_orig: tape.scalar_value(ce).as_f64() / n as f64,
            ce_trans: 0.0,
            cl: 0.0,
        };
        if !losses.is_finite() {
            return Err(DebiasError::NonFinite { epoch, step, losses });
        }
        let grads: Vec<Arr<S>> = {
            let gvars = tape.grad(ce, bound.all());
            gvars.into_iter().map(|g| tape.value(g).clone()).collect()
        };
        self.adam.step(&mut self.model.store, &grads);
        Ok(losses)
    }
}

/// Free-function form of the step for external callers: one update on a
/// prepared trainer.
pub fn cdvg_step<S: Scalar>(
    trainer: &mut DebiasTrainer<S>,
    dataset: &BiasedDataset,
    indices: &[usize],
    epoch: usize,
    step: usize,
) -> Result<(StepLosses, StepDetail<S>), DebiasError> {
    trainer.cdvg_step(dataset, indices, epoch, step)
}

/// Output destination and provenance labels of a training run.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: Option<PathBuf>,
    pub dataset: String,
    pub ratio: f64,
    pub method: String,
    /// Seed-independent config hash chained with upstream artifact hashes.
    pub config_hash: String,
    /// Free-form provenance recorded in run.json.
    pub extra: serde_json::Value,
}

impl RunContext {
    pub fn in_memory(dataset: &str, ratio: f64, method: &str) -> Self {
        RunContext {
            out_dir: None,
            dataset: dataset.to_string(),
            ratio,
            method: method.to_string(),
            config_hash: String::new(),
            extra: serde_json::Value::Null,
        }
    }
}

enum Method {
    Cdvg,
    Vanilla,
}

fn run_training<S: Scalar>(
    method: Method,
    train_set: &BiasedDataset,
    test_set: &BiasedDataset,
    view_source: ViewSource<S>,
    config: &TrainConfig,
    ctx: &RunContext,
) -> Result<(DebiasModel<S>, RunMetrics), DebiasError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(DebiasError::Config("empty training set".into()));
    }
    let first = &train_set.samples[0].image;
    let arch = EncoderArch::for_kind(config.encoder, first.h, first.w, train_set.num_classes());
    let model = DebiasModel::new(arch, config.seed);
    let mut trainer = DebiasTrainer::new(model, config.clone(), view_source)?;

    let mut metrics_file = match &ctx.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| DebiasError::Io(e.to_string()))?;
            let run_meta = serde_json::json!({
                "dataset": ctx.dataset,
                "ratio": ctx.ratio,
                "method": ctx.method,
                "seed": config.seed,
                "config_hash": ctx.config_hash,
                "config": config,
                "upstream": ctx.extra,
            });
            std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&run_meta).unwrap())
                .map_err(|e| DebiasError::Io(e.to_string()))?;
            let f = std::fs::File::create(dir.join("metrics.ndjson"))
                .map_err(|e| DebiasError::Io(e.to_string()))?;
            Some(f)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        let lr = config.lr_at_epoch(epoch);
        trainer.set_lr(lr);

        let mut order: Vec<usize> = (0..train_set.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = stream(config.seed, &[tag::TRAIN_SHUFFLE, epoch as u64]);
            order.shuffle(&mut rng);
        }

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut seen = 0usize;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let losses = match method {
                Method::Cdvg => trainer.cdvg_step(train_set, chunk, epoch, step)?.0,
                Method::Vanilla => trainer.vanilla_step(train_set, chunk, epoch, step)?,
            };
            sums.0 += losses.ce_orig * chunk.len() as f64;
            sums.1 += losses.ce_trans * chunk.len() as f64;
            sums.2 += losses.cl * chunk.len() as f64;
            seen += chunk.len();
        }

        let test_acc = crate::eval::unbiased_accuracy(&mut trainer.model, test_set)
            .map_err(|e| DebiasError::Config(e.to_string()))?;
        let record = EpochRecord {
            epoch: epoch + 1,
            ce_orig: sums.0 / seen as f64,
            ce_trans: sums.1 / seen as f64,
            cl: sums.2 / seen as f64,
            test_acc,
            lr,
            wall_s: t0.elapsed().as_secs_f64(),
        };
        if let Some(f) = metrics_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&record).unwrap())
                .map_err(|e| DebiasError::Io(e.to_string()))?;
        }
        records.push(record);
    }

    if let Some(dir) = &ctx.out_dir {
        trainer
            .model
            .save(&dir.join("checkpoint.bin"), serde_json::json!({ "method": ctx.method }))?;
    }

    let metrics = RunMetrics {
        dataset: ctx.dataset.clone(),
        ratio: ctx.ratio,
        method: ctx.method.clone(),
        seed: config.seed,
        config_hash: ctx.config_hash.clone(),
        records,
    };
    Ok((trainer.model, metrics))
}

/// Train the debiasing objective with views from `view_source`.
///
/// Pre: the view source was built on the same train split (or is the
/// identity, for the `no_G` ablation).
pub fn train_cdvg<S: Scalar>(
    train_set: &BiasedDataset,
    test_set: &BiasedDataset,
    view_source: ViewSource<S>,
    config: &TrainConfig,
    ctx: &RunContext,
) -> Result<(DebiasModel<S>, RunMetrics), DebiasError> {
    let effective_source = match config.ablation {
        Ablation::NoG => ViewSource::Identity { num_domains: view_source.num_domains() },
        _ => view_source,
    };
    run_training(Method::Cdvg, train_set, test_set, effective_source, config, ctx)
}

/// Single-view cross-entropy baseline with the same encoder and schedule.
pub fn train_vanilla<S: Scalar>(
    train_set: &BiasedDataset,
    test_set: &BiasedDataset,
    config: &TrainConfig,
    ctx: &RunContext,
) -> Result<(DebiasModel<S>, RunMetrics), DebiasError> {
    let k = train_set.num_classes();
    run_training(
        Method::Vanilla,
        train_set,
        test_set,
        ViewSource::Identity { num_domains: k },
        config,
        ctx,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::source::{synthetic_digits, SourceConfig};
    use crate::datasets::{build_colored_mnist, DatasetConfig};
    use crate::debias::EncoderKind;

    fn tiny_sets() -> (BiasedDataset, BiasedDataset) {
        let src = synthetic_digits(SourceConfig::new(64, 32, 8, 21));
        let b = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.1, 4)).unwrap();
        (b.train, b.unbiased_test)
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        let mut cfg = TrainConfig::colored_mnist();
        cfg.epochs = epochs;
        cfg.batch_size = 16;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn step_components_are_finite_and_nonnegative() {
        let (train, _) = tiny_sets();
        let cfg = tiny_config(1);
        let arch = EncoderArch::for_kind(EncoderKind::Mlp, 28, 28, 10);
        let model = DebiasModel::<f32>::new(arch, cfg.seed);
        let mut trainer =
            DebiasTrainer::new(model, cfg, ViewSource::Identity { num_domains: 10 }).unwrap();
        let (losses, detail) = trainer.cdvg_step(&train, &[0, 1, 2, 3], 0, 0).unwrap();
        assert!(losses.is_finite());
        assert!(losses.ce_orig >= 0.0 && losses.ce_trans >= 0.0 && losses.cl >= 0.0);
        assert_eq!(detail.labels.len(), 4);
        assert_eq!(detail.targets.len(), 4);
    }

    #[test]
    fn total_recomposes_from_components() {
        let (train, _) = tiny_sets();
        let cfg = tiny_config(1);
        let n = 8;
        let arch = EncoderArch::for_kind(EncoderKind::Mlp, 28, 28, 10);
        let model = DebiasModel::<f32>::new(arch, cfg.seed);
        let lambda = cfg.lambda_cl;
        let mut trainer =
            DebiasTrainer::new(model, cfg, ViewSource::Identity { num_domains: 10 }).unwrap();
        let indices: Vec<usize> = (0..n).collect();
        let (losses, detail) = trainer.cdvg_step(&train, &indices, 0, 0).unwrap();
        let recomposed = (losses.ce_orig + losses.ce_trans + lambda * losses.cl) * n as f64;
        assert!(
            (recomposed - detail.total).abs() < 1e-5 * detail.total.abs().max(1.0),
            "{recomposed} vs {detail_total}",
            detail_total = detail.total
        );
    }

    #[test]
    fn generator_domain_mismatch_is_config_error() {
        let cfg = tiny_config(1);
        let arch = EncoderArch::for_kind(EncoderKind::Mlp, 28, 28, 10);
        let model = DebiasModel::<f32>::new(arch, cfg.seed);
        let r = DebiasTrainer::new(model, cfg, ViewSource::Identity { num_domains: 7 });
        assert!(matches!(r, Err(DebiasError::Config(_))));
    }

    #[test]
    fn vanilla_and_cdvg_share_metrics_schema() {
        let (train, test) = tiny_sets();
        let mut cfg = tiny_config(2);
        cfg.batch_size = 32;
        let ctx = RunContext::in_memory("colored_mnist", 0.1, "vanilla");
        let (_, mv) = train_vanilla::<f32>(&train, &test, &cfg, &ctx).unwrap();
        let ctx2 = RunContext::in_memory("colored_mnist", 0.1, "cdvg");
        let (_, mc) = train_cdvg::<f32>(
            &train,
            &test,
            ViewSource::Identity { num_domains: 10 },
            &cfg,
            &ctx2,
        )
        .unwrap();
        assert_eq!(mv.records.len(), 2);
        assert_eq!(mc.records.len(), 2);
        // same schema: serialize both and compare keys
        let kv: Vec<String> = serde_json::to_value(&mv.records[0])
            .unwrap()
            .as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let kc: Vec<String> = serde_json::to_value(&mc.records[0])
            .unwrap()
            .as_object()
            .unwrap()
            .keys()
            .cloned()
            .collect();
        assert_eq!(kv, kc);
        mv.validate().unwrap();
        mc.validate().unwrap();
    }

    /// lambda=0, identity views, identity augmentations: the parameter
    /// update must equal a hand-built double-CE step bit for bit.
    #[test]
    fn ablation_collapse_is_bit_exact() {
        let (train, _) = tiny_sets();
        let mut cfg = tiny_config(1);
        cfg.lambda_cl = 0.0;
        cfg.augment = crate::debias::AugmentationPolicy::identity(28);
        let seed = cfg.seed;
        let indices: Vec<usize> = (0..8).collect();

        // path A: cdvg_step
        let arch = EncoderArch::for_kind(EncoderKind::Mlp, 28, 28, 10);
        let model_a = DebiasModel::<f32>::new(arch.clone(), seed);
        let mut trainer =
            DebiasTrainer::new(model_a, cfg.clone(), ViewSource::Identity { num_domains: 10 })
                .unwrap();
        trainer.set_lr(cfg.lr);
        trainer.cdvg_step(&train, &indices, 0, 0).unwrap();
        let params_a: Vec<Arr<f32>> =
            trainer.model.store.iter().map(|(_, v)| v.clone()).collect();

        // path B: independently composed double-CE step on a twin model
        let mut model_b = DebiasModel::<f32>::new(arch, seed);
        let mut adam = Adam::new(&model_b.store, cfg.lr);
        let (x01, labels) = batch01::<f32>(&train, &indices);
        let x = to_model_domain(&x01);
        let mut tape = Tape::<f32>::new();
        let bound = model_b.store.bind(&mut tape);
        let xv1 = tape.constant(x.clone());
        let xv2 = tape.constant(x);
        let r1 = model_b.encode(&mut tape, &bound, xv1, true);
        let l1 = model_b.classify(&mut tape, &bound, r1);
        let c1_rows = softmax_cross_entropy_rows(&mut tape, l1, &labels);
        let c1 = tape.sum(c1_rows);
        let r2 = model_b.encode(&mut tape, &bound, xv2, true);
        let l2 = model_b.classify(&mut tape, &bound, r2);
        let c2_rows = softmax_cross_entropy_rows(&mut tape, l2, &labels);
        let c2 = tape.sum(c2_rows);
        let total = tape.add(c1, c2);
        let grads: Vec<Arr<f32>> = {
            let gv = tape.grad(total, bound.all());
            gv.into_iter().map(|g| tape.value(g).clone()).collect()
        };
        adam.step(&mut model_b.store, &grads);
        let params_b: Vec<Arr<f32>> = model_b.store.iter().map(|(_, v)| v.clone()).collect();

        for (a, b) in params_a.iter().zip(params_b.iter()) {
            assert_eq!(a, b, "parameters diverged in the degenerate configuration");
        }
    }
}
