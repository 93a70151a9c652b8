//! Manual timing probes for sizing desk-scale runs (ignored by default).
//! Run with: cargo test -p cdvg-core --test perf_probe -- --ignored --nocapture

use std::time::Instant;

use cdvg_core::datasets::source::{synthetic_digits, SourceConfig};
use cdvg_core::datasets::{build_colored_mnist, DatasetConfig};
use cdvg_core::debias::{train_vanilla, DebiasTrainer, RunContext, TrainConfig, ViewSource};
use cdvg_core::debias::{DebiasModel, EncoderArch};
use cdvg_core::translator::{train_translator, TranslatorConfig};

#[test]
#[ignore]
fn time_translator_steps() {
    let src = synthetic_digits(SourceConfig::new(512, 16, 16, 1));
    let ds = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.005, 1)).unwrap().train;
    for (gb, db) in [(16usize, 16usize), (24, 32), (32, 32), (64, 64)] {
        let mut cfg = TranslatorConfig::colored_mnist();
        cfg.iterations = 10;
        cfg.g_base_channels = gb;
        cfg.d_base_channels = db;
        cfg.checkpoint_every = 0;
        let t0 = Instant::now();
        let run = train_translator::<f32>(&ds, &cfg, None).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "g_base={gb} d_base={db}: {:.3} s/iter  ({} iters, last rec {:.3})",
            dt / 10.0,
            run.losses.len(),
            run.losses.last().unwrap().1.rec
        );
    }
}

#[test]
#[ignore]
fn time_debias_epoch() {
    let src = synthetic_digits(SourceConfig::new(2000, 200, 16, 1));
    let b = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.005, 1)).unwrap();
    let mut cfg = TrainConfig::colored_mnist();
    cfg.epochs = 2;
    let t0 = Instant::now();
    let ctx = RunContext::in_memory("colored_mnist", 0.005, "cdvg");
    let _ = cdvg_core::debias::train_cdvg::<f32>(
        &b.train,
        &b.unbiased_test,
        ViewSource::Identity { num_domains: 10 },
        &cfg,
        &ctx,
    )
    .unwrap();
    println!("cdvg identity-view epoch (2000 samples): {:.3} s", t0.elapsed().as_secs_f64() / 2.0);

    let t1 = Instant::now();
    let ctx2 = RunContext::in_memory("colored_mnist", 0.005, "vanilla");
    let _ = train_vanilla::<f32>(&b.train, &b.unbiased_test, &cfg, &ctx2).unwrap();
    println!("vanilla epoch (2000 samples): {:.3} s", t1.elapsed().as_secs_f64() / 2.0);

    // raw step cost without augmentation
    let arch = EncoderArch::mlp(28, 28, 10);
    let model = DebiasModel::<f32>::new(arch, 0);
    let mut cfg2 = TrainConfig::colored_mnist();
    cfg2.augment = cdvg_core::debias::AugmentationPolicy::identity(28);
    let mut tr = DebiasTrainer::new(model, cfg2, ViewSource::Identity { num_domains: 10 }).unwrap();
    let idx: Vec<usize> = (0..256).collect();
    let t2 = Instant::now();
    for s in 0..8 {
        tr.cdvg_step(&b.train, &idx, 0, s).unwrap();
    }
    println!("raw cdvg step batch=256 no-aug: {:.3} s", t2.elapsed().as_secs_f64() / 8.0);
}

#[test]
#[ignore]
fn time_cache_build() {
    use cdvg_core::debias::TranslationCache;
    use cdvg_core::translator::{ArchConfig, TranslationModel};
    let src = synthetic_digits(SourceConfig::new(1000, 16, 16, 1));
    let ds = build_colored_mnist(&src, &DatasetConfig::colored_mnist(0.005, 1)).unwrap().train;
    let model = TranslationModel::<f32>::new(
        ArchConfig {
            image_size: 28,
            num_domains: 10,
            g_base_channels: 32,
            g_blocks: 3,
            d_repeat_num: 4,
            d_base_channels: 32,
        },
        1,
    )
    .unwrap();
    let t0 = Instant::now();
    let cache = TranslationCache::build(&model, &ds, 64).unwrap();
    println!(
        "cache build 1000 samples x 10 domains (g_base 32): {:.2} s ({} imgs)",
        t0.elapsed().as_secs_f64(),
        cache.len() * cache.num_domains()
    );
}
