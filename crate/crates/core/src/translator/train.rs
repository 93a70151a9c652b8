//! Adversarial training of the translation model.
//!
//! Wasserstein objective with gradient penalty, a domain-classification
//! loss on both discriminator (real images, true domain) and generator
//! (fakes, target domain), and a cycle reconstruction term
//! `|x - G(G(x,y'),y)|_1` weighted by `lambda_rec`. The discriminator is
//! updated every step; the generator every `critic_steps` steps.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{TranslationModel, TranslatorConfig, TranslatorError};
use crate::autodiff::{Tape, Var};
use crate::datasets::BiasedDataset;
use crate::nn::adam::Adam;
use crate::nn::losses::softmax_cross_entropy_mean;
use crate::rng::{stream, tag};
use crate::scalar::Scalar;
use crate::Arr;

/// Loss components of one training step. `adv_d` includes the gradient
/// penalty; `adv_g`, `cls_g` and `rec` are evaluated every step and
/// back-propagated on generator steps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepLosses {
    pub adv_d: f64,
    pub adv_g: f64,
    pub cls_d: f64,
    pub cls_g: f64,
    pub rec: f64,
}

impl StepLosses {
    pub fn is_finite(&self) -> bool {
        [self.adv_d, self.adv_g, self.cls_d, self.cls_g, self.rec]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Mean absolute difference between two same-shape nodes.
pub(crate) fn l1_mean<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Var {
    let d = tape.sub(a, b);
    let ad = tape.abs(d);
    tape.mean(ad)
}

/// Owns the model and optimizer state across steps.
pub struct TranslatorTrainer<S: Scalar> {
    pub model: TranslationModel<S>,
    pub config: TranslatorConfig,
    adam_g: Adam<S>,
    adam_d: Adam<S>,
    iter: usize,
}

impl<S: Scalar> TranslatorTrainer<S> {
    pub fn new(model: TranslationModel<S>, config: TranslatorConfig) -> Result<Self, TranslatorError> {
        config.validate()?;
        // GAN-style betas (beta1 = 0.5)
        let adam_g = Adam::with_betas(&model.g_store, config.lr_g, 0.5, 0.999);
        let adam_d = Adam::with_betas(&model.d_store, config.lr_d, 0.5, 0.999);
        Ok(TranslatorTrainer { model, config, adam_g, adam_d, iter: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One discriminator update, plus a generator update every
    /// `critic_steps` calls. `x`: [n,3,h,w] in [-1,1]; `y`: class labels
    /// used as source domains.
    pub fn gan_train_step(&mut self, x: &Arr<S>, y: &[usize]) -> Result<StepLosses, TranslatorError> {
        let n = x.shape()[0];
        assert_eq!(y.len(), n, "one label per sample");
        let k = self.model.num_domains();
        let cfg = self.config.clone();
        let mut rng = stream(cfg.seed, &[tag::GAN_STEP, self.iter as u64, 1]);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let update_g = (self.iter + 1) % cfg.critic_steps == 0;

        // ---- discriminator phase ----
        let mut tape = Tape::<S>::new();
        let bd = self.model.d_store.bind(&mut tape);
        let bg = self.model.g_store.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let fake = self.model.generator.forward(&mut tape, &bg, xv, &targets);

        let (src_real, cls_real) = self.model.discriminator.forward(&mut tape, &bd, xv);
        let (src_fake, cls_fake) = self.model.discriminator.forward(&mut tape, &bd, fake);
        let mean_fake = tape.mean(src_fake);
        let mean_real = tape.mean(src_real);
        let adv = tape.sub(mean_fake, mean_real);
        let cls_d = softmax_cross_entropy_mean(&mut tape, cls_real, y);

        // gradient penalty on interpolates
        let fake_val = tape.value(fake).clone();
        let mut xhat = Arr::<S>::zeros(IxDyn(x.shape()));
        {
            let xs = x.as_slice().unwrap();
            let fs = fake_val.as_slice().unwrap();
            let hs = xhat.as_slice_mut().unwrap();
            let pixels = xs.len() / n;
            for i in 0..n {
                let eps = S::of(rng.gen_range(0.0..1.0));
                for p in 0..pixels {
                    let idx = i * pixels + p;
                    hs[idx] = eps * xs[idx] + (S::one() - eps) * fs[idx];
                }
            }
        }
        let xh = tape.param(xhat);
        let (src_hat, _) = self.model.discriminator.forward(&mut tape, &bd, xh);
        let s_sum = tape.sum(src_hat);
        let gx = tape.grad(s_sum, &[xh])[0];
        let gsq = tape.mul(gx, gx);
        let flat = tape.reshape(gsq, &[n, x.len() / n]);
        let persample = tape.sum_axis(flat, 1);
        let safe = tape.affine(persample, S::one(), S::of(1e-12));
        let norm = tape.sqrt(safe);
        let dev = tape.affine(norm, S::one(), -S::one());
        let devsq = tape.mul(dev, dev);
        let gp = tape.mean(devsq);

        let cls_term = tape.scale(cls_d, S::of(cfg.lambda_cls));
        let gp_term = tape.scale(gp, S::of(cfg.lambda_gp));
        let d_core = tape.add(adv, cls_term);
        let d_loss = tape.add(d_core, gp_term);

        let adv_d_val = tape.scalar_value(adv).as_f64() + cfg.lambda_gp * tape.scalar_value(gp).as_f64();
        let cls_d_val = tape.scalar_value(cls_d).as_f64();

        let d_grads: Vec<Arr<S>> = {
            let gvars = tape.grad(d_loss, bd.all());
            gvars.into_iter().map(|g| tape.value(g).clone()).collect()
        };
        self.adam_d.step(&mut self.model.d_store, &d_grads);

        // ---- generator phase ----
        let (adv_g_val, cls_g_val, rec_val) = if update_g {
            let mut t2 = Tape::<S>::new();
            let bg2 = self.model.g_store.bind(&mut t2);
            let bd2 = self.model.d_store.bind_frozen(&mut t2);
            let xv2 = t2.constant(x.clone());
            let fake2 = self.model.generator.forward(&mut t2, &bg2, xv2, &targets);
            let (src_f2, cls_f2) = self.model.discriminator.forward(&mut t2, &bd2, fake2);
            let mf = t2.mean(src_f2);
            let adv_g = t2.neg(mf);
            let cls_g = softmax_cross_entropy_mean(&mut t2, cls_f2, &targets);
            let recon = self.model.generator.forward(&mut t2, &bg2, fake2, y);
            let rec = l1_mean(&mut t2, xv2, recon);

            let cls_t = t2.scale(cls_g, S::of(cfg.lambda_cls));
            let rec_t = t2.scale(rec, S::of(cfg.lambda_rec));
            let core = t2.add(adv_g, cls_t);
            let g_loss = t2.add(core, rec_t);
            let g_grads: Vec<Arr<S>> = {
                let gvars = t2.grad(g_loss, bg2.all());
                gvars.into_iter().map(|g| t2.value(g).clone()).collect()
            };
            self.adam_g.step(&mut self.model.g_store, &g_grads);
            (
                t2.scalar_value(adv_g).as_f64(),
                t2.scalar_value(cls_g).as_f64(),
                t2.scalar_value(rec).as_f64(),
            )
        } else {
            // report-only: reuse the discriminator tape's fake pass
            let mf = tape.mean(src_fake);
            let adv_g = tape.neg(mf);
            let cls_g = softmax_cross_entropy_mean(&mut tape, cls_fake, &targets);
            let recon = self.model.generator.forward(&mut tape, &bg, fake, y);
            let rec = l1_mean(&mut tape, xv, recon);
            (
                tape.scalar_value(adv_g).as_f64(),
                tape.scalar_value(cls_g).as_f64(),
                tape.scalar_value(rec).as_f64(),
            )
        };

        let losses = StepLosses {
            adv_d: adv_d_val,
            adv_g: adv_g_val,
            cls_d: cls_d_val,
            cls_g: cls_g_val,
            rec: rec_val,
        };
        if !losses.is_finite() {
            return Err(TranslatorError::NonFinite { iteration: self.iter, losses });
        }
        self.iter += 1;
        Ok(losses)
    }

    /// Persist full training state (params + optimizer moments + iteration).
    pub fn save_state(&self, path: &Path) -> Result<(), TranslatorError> {
        let mut tensors: Vec<(String, &Arr<S>)> = Vec::new();
        for (name, v) in self.model.g_store.iter().chain(self.model.d_store.iter()) {
            tensors.push((name.to_string(), v));
        }
        let (gm, gv, gt) = self.adam_g.state();
        let (dm, dv, dt) = self.adam_d.state();
        let g_names: Vec<String> = self.model.g_store.iter().map(|(n, _)| n.to_string()).collect();
        let d_names: Vec<String> = self.model.d_store.iter().map(|(n, _)| n.to_string()).collect();
        for (i, n) in g_names.iter().enumerate() {
            tensors.push((format!("opt_g.m.{n}"), &gm[i]));
            tensors.push((format!("opt_g.v.{n}"), &gv[i]));
        }
        for (i, n) in d_names.iter().enumerate() {
            tensors.push((format!("opt_d.m.{n}"), &dm[i]));
            tensors.push((format!("opt_d.v.{n}"), &dv[i]));
        }
        let meta = serde_json::json!({
            "arch": self.model.arch,
            "iter": self.iter,
            "t_g": gt,
            "t_d": dt,
            "config": self.config,
        });
        crate::nn::store_io::save_tensors(path, &tensors, meta)?;
        Ok(())
    }

    /// Restore a trainer saved by [`TranslatorTrainer::save_state`].
    pub fn load_state(path: &Path) -> Result<Self, TranslatorError> {
        let (tensors, meta) = crate::nn::store_io::load_tensors::<S>(path)?;
        let arch: super::ArchConfig = serde_json::from_value(meta["arch"].clone())
            .map_err(|e| TranslatorError::Config(format!("bad state meta: {e}")))?;
        let config: TranslatorConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| TranslatorError::Config(format!("bad state meta: {e}")))?;
        let iter = meta["iter"].as_u64().unwrap_or(0) as usize;
        let t_g = meta["t_g"].as_u64().unwrap_or(0);
        let t_d = meta["t_d"].as_u64().unwrap_or(0);

        let mut by_name: std::collections::HashMap<String, Arr<S>> = tensors.into_iter().collect();
        let mut model = TranslationModel::<S>::new(arch, 0)?;
        let take = |by_name: &mut std::collections::HashMap<String, Arr<S>>,
                    name: &str|
         -> Result<Arr<S>, TranslatorError> {
            by_name
                .remove(name)
                .ok_or_else(|| TranslatorError::Config(format!("state missing tensor {name}")))
        };
        let g_names: Vec<String> = model.g_store.iter().map(|(n, _)| n.to_string()).collect();
        let d_names: Vec<String> = model.d_store.iter().map(|(n, _)| n.to_string()).collect();
        let mut g_vals = Vec::new();
        for n in &g_names {
            g_vals.push(take(&mut by_name, n)?);
        }
        model.g_store.load_values(g_vals);
        let mut d_vals = Vec::new();
        for n in &d_names {
            d_vals.push(take(&mut by_name, n)?);
        }
        model.d_store.load_values(d_vals);

        let mut trainer = TranslatorTrainer::new(model, config)?;
        let mut gm = Vec::new();
        let mut gv = Vec::new();
        for n in &g_names {
            gm.push(take(&mut by_name, &format!("opt_g.m.{n}"))?);
            gv.push(take(&mut by_name, &format!("opt_g.v.{n}"))?);
        }
        trainer.adam_g.load_state(gm, gv, t_g);
        let mut dm = Vec::new();
        let mut dv = Vec::new();
        for n in &d_names {
            dm.push(take(&mut by_name, &format!("opt_d.m.{n}"))?);
            dv.push(take(&mut by_name, &format!("opt_d.v.{n}"))?);
        }
        trainer.adam_d.load_state(dm, dv, t_d);
        trainer.iter = iter;
        Ok(trainer)
    }
}

/// Convert dataset samples at `indices` to a [-1,1] NCHW batch.
pub fn batch_from_dataset<S: Scalar>(
    dataset: &BiasedDataset,
    indices: &[usize],
    hflip: &[bool],
) -> (Arr<S>, Vec<usize>) {
    let first = &dataset.samples[indices[0]].image;
    let (h, w) = (first.h, first.w);
    let mut x = Arr::<S>::zeros(IxDyn(&[indices.len(), 3, h, w]));
    let mut labels = Vec::with_capacity(indices.len());
    for (bi, &si) in indices.iter().enumerate() {
        let s = &dataset.samples[si];
        let flip = hflip.get(bi).copied().unwrap_or(false);
        for yy in 0..h {
            for xx in 0..w {
                let sx = if flip { w - 1 - xx } else { xx };
                for ch in 0..3 {
                    let v = s.image.get(yy, sx, ch) as f64 / 255.0 * 2.0 - 1.0;
                    x[[bi, ch, yy, xx]] = S::of(v);
                }
            }
        }
        labels.push(s.class_label);
    }
    (x, labels)
}

/// Artifacts produced by [`train_translator`].
pub struct TranslatorRun<S: Scalar> {
    pub model: TranslationModel<S>,
    pub losses: Vec<(usize, StepLosses)>,
    /// (iteration, checkpoint path) snapshots for diagnostics probing.
    pub checkpoints: Vec<(usize, PathBuf)>,
}

/// Train the translator on the biased train split. Domain labels are the
/// task class labels; target domains are re-sampled uniformly every
/// iteration. If `out_dir` is given, loss curves, probe checkpoints and a
/// resumable state file are written there, and an interrupted run resumes
/// from the last saved state.
pub fn train_translator<S: Scalar>(
    dataset: &BiasedDataset,
    config: &TranslatorConfig,
    out_dir: Option<&Path>,
) -> Result<TranslatorRun<S>, TranslatorError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TranslatorError::Config("empty training dataset".into()));
    }
    let first = &dataset.samples[0].image;
    if first.h != first.w {
        return Err(TranslatorError::Config("images must be square".into()));
    }
    let k = dataset.num_classes();
    let arch = config.arch(first.h, k);
    arch.validate().map_err(TranslatorError::Config)?;

    let state_path = out_dir.map(|d| d.join("state.bin"));
    let mut trainer = match &state_path {
        Some(p) if p.exists() => TranslatorTrainer::<S>::load_state(p)?,
        _ => TranslatorTrainer::new(TranslationModel::new(arch, config.seed)?, config.clone())?,
    };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| TranslatorError::Io(e.to_string()))?;
    }
    let mut loss_file = match out_dir {
        Some(dir) => {
            let path = dir.join("losses.ndjson");
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| TranslatorError::Io(e.to_string()))?;
            Some(file)
        }
        None => None,
    };

    let mut losses = Vec::new();
    let mut checkpoints = Vec::new();
    let snapshot = |trainer: &TranslatorTrainer<S>,
                    iter: usize,
                    checkpoints: &mut Vec<(usize, PathBuf)>|
     -> Result<(), TranslatorError> {
        if let Some(dir) = out_dir {
            let path = dir.join("checkpoints").join(format!("iter_{iter:06}.bin"));
            trainer.model.save(&path, serde_json::json!({ "iteration": iter }))?;
            checkpoints.push((iter, path));
        }
        Ok(())
    };

    // snapshot the untrained generator so probe curves include the origin
    if trainer.iteration() == 0 && config.checkpoint_every > 0 {
        snapshot(&trainer, 0, &mut checkpoints)?;
    }

    while trainer.iteration() < config.iterations {
        let iter = trainer.iteration();
        let mut batch_rng = stream(config.seed, &[tag::GAN_STEP, iter as u64, 0]);
        let indices: Vec<usize> =
            (0..config.batch_size).map(|_| batch_rng.gen_range(0..dataset.len())).collect();
        let flips: Vec<bool> = (0..config.batch_size)
            .map(|_| config.horizontal_flip && batch_rng.gen_bool(0.5))
            .collect();
        let (x, y) = batch_from_dataset::<S>(dataset, &indices, &flips);

        let step = match trainer.gan_train_step(&x, &y) {
            Ok(s) => s,
            Err(TranslatorError::NonFinite { iteration, losses }) => {
                if let Some(dir) = out_dir {
                    let dump = serde_json::json!({ "iteration": iteration, "losses": losses });
                    let _ = std::fs::write(
                        dir.join("divergence.json"),
                        serde_json::to_string_pretty(&dump).unwrap(),
                    );
                }
                return Err(TranslatorError::NonFinite { iteration, losses });
            }
            Err(e) => return Err(e),
        };

        if let Some(f) = loss_file.as_mut() {
            let line = serde_json::json!({
                "iteration": iter,
                "adv_d": step.adv_d, "adv_g": step.adv_g,
                "cls_d": step.cls_d, "cls_g": step.cls_g, "rec": step.rec,
            });
            writeln!(f, "{line}").map_err(|e| TranslatorError::Io(e.to_string()))?;
        }
        losses.push((iter, step));

        let done = trainer.iteration();
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            snapshot(&trainer, done, &mut checkpoints)?;
            if let Some(p) = &state_path {
                trainer.save_state(p)?;
            }
        }
    }

    if let Some(p) = &state_path {
        trainer.save_state(p)?;
    }
    Ok(TranslatorRun { model: trainer.model, losses, checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{max_rel_err, numerical_grad};
    use crate::datasets::source::{synthetic_digits, SourceConfig};
    use crate::datasets::{build_colored_mnist, DatasetConfig};
    use crate::translator::translate;

    fn tiny_config() -> TranslatorConfig {
        let mut cfg = TranslatorConfig::colored_mnist();
        cfg.iterations = 6;
        cfg.batch_size = 2;
        cfg.g_base_channels = 4;
        cfg.d_base_channels = 4;
        cfg.g_blocks = 1;
        cfg.checkpoint_every = 0;
        cfg
    }

    fn tiny_dataset() -> BiasedDataset {
        let src = synthetic_digits(SourceConfig::new(32, 4, 4, 11));
        build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.1, 2)).unwrap().train
    }

    #[test]
    fn l1_of_identical_inputs_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Arr::from_shape_fn(IxDyn(&[2, 3]), |ix| ix[1] as f64));
        let rec = l1_mean(&mut tape, x, x);
        assert_eq!(tape.scalar_value(rec), 0.0);
    }

    #[test]
    fn step_returns_five_finite_components() {
        let ds = tiny_dataset();
        let run = train_translator::<f32>(&ds, &tiny_config(), None).unwrap();
        assert_eq!(run.losses.len(), 6);
        for (_, l) in &run.losses {
            assert!(l.is_finite(), "non-finite step losses {l:?}");
        }
    }

    #[test]
    fn zero_iterations_returns_initialized_model_and_checkpoint_loads_back() {
        let ds = tiny_dataset();
        let mut cfg = tiny_config();
        cfg.iterations = 0;
        let run = train_translator::<f32>(&ds, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        run.model.save(&path, serde_json::json!({})).unwrap();
        let (loaded, _) = TranslationModel::<f32>::load(&path).unwrap();
        let x = Arr::<f32>::zeros(IxDyn(&[1, 3, 28, 28]));
        assert_eq!(
            translate(&run.model, &x, &[5]).unwrap(),
            translate(&loaded, &x, &[5]).unwrap()
        );
    }

    #[test]
    fn resume_continues_from_saved_iteration() {
        let ds = tiny_dataset();
        let mut cfg = tiny_config();
        cfg.iterations = 4;
        cfg.checkpoint_every = 2;
        let dir = tempfile::tempdir().unwrap();
        let _ = train_translator::<f32>(&ds, &cfg, Some(dir.path())).unwrap();
        // bump the target and resume; state.bin should carry us forward
        cfg.iterations = 6;
        let resumed = train_translator::<f32>(&ds, &cfg, Some(dir.path())).unwrap();
        let first_resumed_iter = resumed.losses.first().map(|(i, _)| *i).unwrap();
        assert_eq!(first_resumed_iter, 4, "resume must start after the saved state");
    }

    /// The reconstruction gradient through a toy one-conv generator matches
    /// central finite differences.
    #[test]
    fn rec_gradient_matches_finite_differences() {
        let mut rng = crate::rng::stream(5, &[]);
        let x = Arr::<f64>::from_shape_fn(IxDyn(&[1, 3, 6, 6]), |_| rand::Rng::gen_range(&mut rng, -0.9..0.9));
        let w0 = Arr::<f64>::from_shape_fn(IxDyn(&[3, 3, 3, 3]), |_| rand::Rng::gen_range(&mut rng, -0.3..0.3));

        let rec_loss = |t: &mut Tape<f64>, w: Var, xv: Var| {
            // toy generator: one 3x3 conv, applied twice (fake then recon)
            let fake = t.conv2d(xv, w, 1, 1);
            let recon = t.conv2d(fake, w, 1, 1);
            l1_mean(t, xv, recon)
        };

        let mut tape = Tape::<f64>::new();
        let wv = tape.param(w0.clone());
        let xv = tape.constant(x.clone());
        let loss = rec_loss(&mut tape, wv, xv);
        let g = tape.grad(loss, &[wv])[0];
        let analytic = tape.value(g).clone();

        let numeric = numerical_grad(&w0, 1e-6, |probe| {
            let mut t = Tape::<f64>::new();
            let wp = t.constant(probe.clone());
            let xp = t.constant(x.clone());
            let l = rec_loss(&mut t, wp, xp);
            t.scalar_value(l)
        });
        let err = max_rel_err(&analytic, &numeric, 1e-7);
        assert!(err < 1e-4, "rec gradient mismatch: rel err {err}");
    }
}
