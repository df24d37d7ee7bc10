//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines show up in `cargo test`
//! output. The two desk-scale GAN runs dominate the runtime. Set
//! `CAMNOISE_ACCEPTANCE_CACHE=<dir>` to keep their checkpoints between
//! invocations (they are keyed by configuration and step count only, so
//! clear the directory after changing model or training code).
//! `CAMNOISE_ACCEPTANCE_SKIP_TRAINED=1` skips the criteria that need a
//! trained generator and reports them as SKIP; the run then still fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use camnoise::autograd::Var;
use camnoise::data::{
    build_control_map, compute_residual, Brandmark, ColorSpace, ControlDescriptor, ControlNormalization, EvalMode,
    Image, ImagePair,
};
use camnoise::discriminator::{self, disc_forward, DiscriminatorConfig};
use camnoise::evaluation::{
    evaluate_em1, evaluate_em2, hist_em2, kl_forward, spatial_correlation, temporal_variance, variance_vs_intensity,
    EvalMap, GeneratorSampler, Histogram, HistogramSpec, KL_EPS,
};
use camnoise::generator::{
    block_specs, param_count, snaf_forward, snaf_ni_forward, Generator, GeneratorConfig, NoiseSeeds, Variant,
};
use camnoise::gradcheck::check_gradients;
use camnoise::inference::{plan_tiles, synthesize_tiled, BlendMode, SynthOptions};
use camnoise::losses::{style_loss, PerceptualExtractor};
use camnoise::noise_models::{hetero_sample, procedural_clean, synth_oracle_dataset, HeteroGaussianParams};
use camnoise::params::ParamStore;
use camnoise::tensor::{Shape, Tensor};
use camnoise::training::{derive_seed, TrainConfig, Trainer, TrainingSet};
use camnoise_cli::commands::{cmd_synthesize, cmd_train};
use camnoise_cli::config::{Overrides, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// Desk-scale oracle study.
const STEPS: usize = 15_000;
const WIDTH: usize = 16;
const CROP: usize = 32;
const TRAIN_IMAGES: u64 = 16;
const TEST_IMAGES: u64 = 8;
const IMAGE_SIZE: usize = 64;
const ISO_LOW: u32 = 100;
const ISO_HIGH: u32 = 800;

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome, secs: f64) {
    println!("[{}] criterion {}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.id, o.detail);
}

fn oracle_params() -> BTreeMap<u32, HeteroGaussianParams> {
    BTreeMap::from([
        (ISO_LOW, HeteroGaussianParams::new(0.002, 0.0001).unwrap()),
        (ISO_HIGH, HeteroGaussianParams::new(0.006, 0.0004).unwrap()),
    ])
}

fn descriptors() -> Vec<ControlDescriptor> {
    oracle_params().keys().map(|&iso| ControlDescriptor::new(Brandmark::S6, iso)).collect()
}

fn clean_set(first_seed: u64, n: u64, size: usize) -> Vec<Image> {
    (first_seed..first_seed + n).map(|s| procedural_clean(3, size, size, 0.1, 0.9, s)).collect()
}

fn gaussian_values(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let d = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// Smoothed forward KL written out term by term.
fn kl_direct(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len() as f64;
    let zp: f64 = p.iter().sum::<f64>() + n * KL_EPS;
    let zq: f64 = q.iter().sum::<f64>() + n * KL_EPS;
    let mut sum = 0.0;
    for i in 0..p.len() {
        let pi = (p[i] + KL_EPS) / zp;
        let qi = (q[i] + KL_EPS) / zq;
        sum += pi * pi.ln() - pi * qi.ln();
    }
    sum
}

fn criterion_1() -> Outcome {
    let mut worst = 0f64;
    let mut self_worst = 0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..100u64 {
        let spec = [HistogramSpec::em1_srgb(), HistogramSpec::em1_raw(), HistogramSpec::em2_srgb()][k as usize % 3];
        let scale = if spec == HistogramSpec::em1_raw() { 0.03 } else { 20.0 };
        let n = rng.random_range(10..5000);
        let p = Histogram::from_values(gaussian_values(n, scale * rng.random_range(0.5..2.0), 2 * k), spec);
        let q = Histogram::from_values(gaussian_values(n, scale * rng.random_range(0.5..2.0), 2 * k + 1), spec);
        worst = worst.max((kl_forward(&p, &q).unwrap() - kl_direct(&p.masses, &q.masses)).abs());
        self_worst = self_worst.max(kl_forward(&p, &p).unwrap().abs());
    }
    let a = hist_em2(gaussian_values(10_000_000, 10.0, 1001));
    let b = hist_em2(gaussian_values(10_000_000, 10.0, 1002));
    let em2 = kl_forward(&a, &b).unwrap();
    Outcome {
        id: "1 metric oracle",
        pass: worst <= 1e-9 && self_worst <= 1e-9 && em2 < 1e-4,
        detail: format!("max |kl - direct| = {worst:.2e} (<= 1e-9), max KL(p,p) = {self_worst:.2e} (<= 1e-9), EM-2 of two 1e7 draws = {em2:.2e} (< 1e-4)"),
    }
}

fn criterion_2() -> Outcome {
    let params = HeteroGaussianParams::new(0.01, 0.0004).unwrap();
    let mut worst = 0f64;
    for (k, i) in [0.0f32, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let clean = Image::filled(1, 1000, 1000, i);
        let n = hetero_sample(&clean, &params, &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
        let mean = n.data.iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        let var = n.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 1e6;
        let want = 0.01 * i as f64 + 0.0004;
        worst = worst.max((var - want).abs() / want);
    }
    Outcome {
        id: "2 heteroscedastic fidelity",
        pass: worst <= 0.02,
        detail: format!("max relative variance error over 5 intensities x 1e6 samples = {:.3}% (<= 2%)", 100.0 * worst),
    }
}

fn criterion_3() -> Outcome {
    let n = param_count(&GeneratorConfig { width: 96, variant: Variant::CfgNin, ..Default::default() }).unwrap();
    let rel = (n as f64 - 1.186e6) / 1.186e6;
    Outcome {
        id: "3 architecture anchor",
        pass: rel.abs() <= 0.01,
        detail: format!("CFG_NIN width 96 has {n} parameters ({:+.2}% vs 1.186e6, tolerance 1%)", 100.0 * rel),
    }
}

fn rnd(shape: Shape, seed: u64, std: f64) -> Tensor<f64> {
    Tensor::randn(shape, std, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn criterion_4() -> Outcome {
    let mut errs = Vec::new();
    for injection in [false, true] {
        let mut store =
            ParamStore::<f64>::init(&block_specs("b", 8, injection), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        if injection {
            store.get_mut("b.alpha").unwrap().data_mut()[0] = 0.4;
        }
        store.get_mut("b.gamma").unwrap().data_mut()[0] = 0.7;
        store.insert("x", rnd(Shape::new(1, 8, 16, 16), 8, 1.0)).unwrap();
        let eps = rnd(Shape::new(1, 1, 16, 16), 9, 1.0);
        let target = Var::constant(rnd(Shape::new(1, 8, 16, 16), 10, 1.0));
        let r = check_gradients(&store, 1e-5, 16, |p| {
            let y = if injection { snaf_ni_forward(p.get("x"), p, "b", &eps)? } else { snaf_forward(p.get("x"), p, "b")? };
            Ok(y.mse(&target))
        })
        .unwrap();
        errs.push((if injection { "SNAF-NI" } else { "SNAF" }, r.max_rel_err));
    }
    {
        let ex = PerceptualExtractor::test_random(2, 16).unwrap();
        let w = ex.vars::<f64>();
        let real = Var::constant(rnd(Shape::new(1, 3, 16, 16), 11, 0.1));
        let mut store = ParamStore::<f64>::default();
        store.insert("fake", rnd(Shape::new(1, 3, 16, 16), 12, 0.15)).unwrap();
        let r = check_gradients(&store, 1e-5, 64, |p| style_loss(&real, p.get("fake"), &ex, &w)).unwrap();
        errs.push(("style", r.max_rel_err));
    }
    {
        let c = DiscriminatorConfig { base_width: 8, levels: 2, max_width: 8, ..Default::default() };
        let mut store =
            ParamStore::<f64>::init(&discriminator::param_specs(&c).unwrap(), &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let s = Shape::new(2, 3, 16, 16);
        store.insert("noise", rnd(s, 14, 0.05)).unwrap();
        let clean = Var::constant(rnd(s, 15, 0.3).map(|v| v + 0.5));
        let cm = Var::constant(rnd(s.with_c(6), 16, 0.3));
        let r = check_gradients(&store, 1e-5, 8, |p| Ok(disc_forward(p.get("noise"), &clean, &cm, p, &c)?.square().mean()))
            .unwrap();
        errs.push(("discriminator", r.max_rel_err));
    }
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let detail = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome { id: "4 gradient correctness", pass: worst <= 1e-3, detail: format!("max relative error: {detail} (<= 1e-3)") }
}

fn sprgb_maps(pairs: &[ImagePair], tag: &str) -> Vec<EvalMap> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| EvalMap {
            noise: compute_residual(p).unwrap(),
            brandmark: p.descriptor.brandmark,
            source: format!("{tag}{i}"),
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let clean = clean_set(500, 6, 256);
    let params = oracle_params();
    let descs = descriptors();
    let a = synth_oracle_dataset(&clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(71)).unwrap();
    let b = synth_oracle_dataset(&clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(72)).unwrap();
    let (ra, rb) = (sprgb_maps(&a, "x"), sprgb_maps(&b, "x"));
    let kls: Vec<f64> = [32, 64, 128].iter().map(|&s| evaluate_em1(&ra, &rb, ColorSpace::Srgb, s).unwrap().aggregate).collect();
    Outcome {
        id: "7 EM-1 patch-size monotonicity",
        pass: kls[0] >= kls[1] && kls[1] >= kls[2],
        detail: format!("oracle vs oracle mean patch KL at 32/64/128 = {:.4} / {:.4} / {:.4} (nonincreasing)", kls[0], kls[1], kls[2]),
    }
}

fn tiny_run_config(dir: &Path, steps: usize) -> RunConfig {
    let cfg: RunConfig = serde_json::from_value(serde_json::json!({
        "output_dir": dir,
        "oracle": {"images": 6, "height": 48, "width": 48},
        "generator": {"width": 8, "stages": 1, "blocks_per_stage": 1, "seed_channels": 8},
        "discriminator": {"base_width": 8, "max_width": 8, "levels": 2},
        "train": {"batch_size": 4, "total_steps": steps, "crop_size": 16, "checkpoint_every": 0, "lr_start": 2e-4, "lr_end": 2e-6},
        "extractor": {"kind": "test_random", "seed": 0, "width_divisor": 16},
        "synthesis": {"tile": 32, "overlap": 8},
        "seed": 3,
    }))
    .unwrap();
    cfg.resolve(&Overrides::default()).unwrap()
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let mut cfg = tiny_run_config(&dir, 1000);
        camnoise_cli::commands::cmd_prepare(&cfg).unwrap();
        let ckpt = cmd_train(&mut cfg).unwrap();
        logs.push(std::fs::read(dir.join("metrics.csv")).unwrap());
        // Both syntheses use run a's checkpoint so only the seed matters.
        let mut syn = cfg.clone();
        syn.checkpoint = Some(if run == "a" { ckpt } else { tmp.path().join("a/final.ckpt") });
        let inputs: Vec<PathBuf> = {
            let mut v: Vec<PathBuf> =
                std::fs::read_dir(dir.join("data")).unwrap().map(|e| e.unwrap().path()).collect();
            v.sort();
            v.truncate(3);
            v
        };
        let dirs = cmd_synthesize(&syn, &inputs).unwrap();
        let mut bytes = Vec::new();
        for d in dirs {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            for f in files {
                bytes.push((f.file_name().unwrap().to_owned(), std::fs::read(&f).unwrap()));
            }
        }
        outputs.push(bytes);
    }
    let lines = String::from_utf8_lossy(&logs[0]).lines().count() - 1;
    let same_log = logs[0] == logs[1] && lines == 1000;
    let same_files = outputs[0] == outputs[1] && !outputs[0].is_empty();
    Outcome {
        id: "8 determinism",
        pass: same_log && same_files,
        detail: format!(
            "two 1000-step train runs: loss logs {} ({lines} rows); two syntheses: {} files {}",
            if logs[0] == logs[1] { "identical" } else { "differ" },
            outputs[0].len(),
            if same_files { "byte-identical" } else { "differ" }
        ),
    }
}

struct Trained {
    gen: Generator,
    /// Training time, `None` when loaded from the cache.
    secs: Option<f64>,
}

fn report_training(what: &str, t: &Trained) {
    match t.secs {
        Some(s) => println!("    trained {what} width {WIDTH} for {STEPS} steps in {s:.0}s"),
        None => println!("    loaded {what} width {WIDTH}, {STEPS} steps, from CAMNOISE_ACCEPTANCE_CACHE"),
    }
}

fn train_oracle(variant: Variant) -> Trained {
    let gen_cfg = GeneratorConfig { width: WIDTH, stages: 2, blocks_per_stage: 2, seed_channels: 16, variant, ..Default::default() };
    let disc_cfg = DiscriminatorConfig { base_width: 16, max_width: 32, levels: 3, ..Default::default() };
    let cfg = TrainConfig {
        batch_size: 8,
        total_steps: STEPS,
        crop_size: CROP,
        lr_start: 2e-4,
        lr_end: 2e-6,
        seed: 1,
        checkpoint_every: 0,
        ..Default::default()
    };
    let cache = std::env::var_os("CAMNOISE_ACCEPTANCE_CACHE")
        .map(|d| PathBuf::from(d).join(format!("{}_{STEPS}_w{WIDTH}.ckpt", variant.as_str())));
    if let Some(p) = cache.as_ref().filter(|p| p.exists()) {
        return Trained { gen: Generator::load(p).unwrap(), secs: None };
    }
    let pairs = synth_oracle_dataset(
        &clean_set(0, TRAIN_IMAGES, IMAGE_SIZE),
        &descriptors(),
        &oracle_params(),
        ColorSpace::Srgb,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let data = TrainingSet::from_pairs(&pairs, EvalMode::Em1, &ControlNormalization::default()).unwrap();
    let start = Instant::now();
    let mut t = Trainer::new(cfg, gen_cfg, disc_cfg, PerceptualExtractor::test_random(0, 8).unwrap()).unwrap();
    t.run(&data, None).unwrap();
    if let Some(p) = &cache {
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        t.gen.save(p).unwrap();
    }
    Trained { gen: t.gen, secs: Some(start.elapsed().as_secs_f64()) }
}

fn synth_opts() -> SynthOptions {
    SynthOptions { space: ColorSpace::Srgb, mode: EvalMode::Em1, norm: ControlNormalization::default() }
}

/// Unit-range noise the generator draws for `clean` (sRGB integers).
fn gen_noise(gen: &Generator, clean: &Image, d: &ControlDescriptor, seed: u64) -> Image {
    let cm = build_control_map(d, clean.height, clean.width, EvalMode::Em1, &ControlNormalization::default()).unwrap();
    let unit = clean.map(|v| v / 255.0);
    let out = gen.sample(&unit.to_tensor(), &cm.planes.to_tensor(), &mut NoiseSeeds::new(seed, &gen.config).unwrap()).unwrap();
    Image::from_tensor(&out, 0)
}

fn criterion_5(gen: &Generator) -> Vec<Outcome> {
    let params = oracle_params();
    let descs = descriptors();
    let test_clean = clean_set(1000, TEST_IMAGES, IMAGE_SIZE);
    let real = synth_oracle_dataset(&test_clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(51)).unwrap();
    let real2 = synth_oracle_dataset(&test_clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(52)).unwrap();
    let synth: Vec<ImagePair> = real
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let plan = plan_tiles(p.clean.height, p.clean.width, IMAGE_SIZE, 8).unwrap();
            let s = synthesize_tiled(&p.clean, &p.descriptor, gen, &plan, 5000 + i as u64, &synth_opts()).unwrap();
            ImagePair::new(p.clean.clone(), s.noisy, ColorSpace::Srgb, p.descriptor.clone()).unwrap()
        })
        .collect();
    let r = sprgb_maps(&real, "x");
    let baseline = evaluate_em2(&r, &sprgb_maps(&real2, "x")).unwrap().aggregate;
    let model = evaluate_em2(&r, &sprgb_maps(&synth, "x")).unwrap().aggregate;
    let a = Outcome {
        id: "5a EM-2 vs self-distance",
        pass: model <= 3.0 * baseline,
        detail: format!("EM-2 KL model {model:.2e} vs 3 x baseline {:.2e} (baseline {baseline:.2e})", 3.0 * baseline),
    };

    // Variance vs intensity per ISO, with the target averaged over each bin's pixels.
    let mut worst = 0f64;
    let mut rows = Vec::new();
    for d in &descs {
        let p = params[&d.iso];
        let mut pairs = Vec::new();
        for (i, c) in test_clean.iter().enumerate() {
            let c255 = c.map(|v| (v * 255.0).round());
            for k in 0..4 {
                pairs.push((c255.map(|v| v / 255.0), gen_noise(gen, &c255, d, derive_seed(7, (i * 4 + k) as u64, d.iso as u64))));
            }
        }
        let curve = variance_vs_intensity(&pairs, 10).unwrap();
        let mut sums = vec![(0f64, 0usize); 10];
        for (c, _) in &pairs {
            for &v in &c.data {
                let b = ((v as f64 * 10.0) as usize).min(9);
                sums[b].0 += v as f64;
                sums[b].1 += 1;
            }
        }
        for (b, bin) in curve.bins.iter().enumerate() {
            for v in bin.variance.iter().flatten() {
                let want = p.variance(sums[b].0 / sums[b].1 as f64);
                let rel = (v - want).abs() / want;
                worst = worst.max(rel);
                rows.push(format!("iso{} I~{:.2} {:.3}", d.iso, bin.center(), v / want));
            }
        }
    }
    println!("    variance/target per populated bin and channel: {}", rows.join(", "));
    let b = Outcome {
        id: "5b variance vs intensity",
        pass: worst <= 0.15,
        detail: format!("worst relative error over populated bins = {:.1}% (<= 15%)", 100.0 * worst),
    };

    let sampler = GeneratorSampler { gen, mode: EvalMode::Em1, norm: ControlNormalization::default(), batch: 32 };
    let mut worst_t = 0f64;
    let mut tdetail = Vec::new();
    for d in &descs {
        let flat = Image::filled(3, CROP, CROP, 128.0 / 255.0);
        let t = temporal_variance(&sampler, &flat, d, 10_000, 99).unwrap();
        let want = params[&d.iso].std(128.0 / 255.0);
        for s in &t.std {
            worst_t = worst_t.max((s - want).abs() / want);
        }
        tdetail.push(format!("iso{} std {:?} vs {want:.5}", d.iso, t.std.iter().map(|s| format!("{s:.5}")).collect::<Vec<_>>()));
    }
    let c = Outcome {
        id: "5c temporal std",
        pass: worst_t <= 0.10,
        detail: format!("{} ; worst relative error {:.1}% (<= 10%)", tdetail.join("; "), 100.0 * worst_t),
    };

    let maps: Vec<Image> = real
        .iter()
        .enumerate()
        .map(|(i, p)| gen_noise(gen, &p.clean, &p.descriptor, 9000 + i as u64))
        .collect();
    let offsets = [(0, 2), (2, 0), (2, 2), (0, 3), (3, 0)];
    let rows = spatial_correlation(&maps, &offsets).unwrap();
    let near = spatial_correlation(&maps, &[(0, 1), (1, 0)]).unwrap();
    let worst_r = rows.iter().flat_map(|r| r.per_channel.iter()).fold(0f64, |m, v| m.max(v.abs()));
    let near_r = near.iter().flat_map(|r| r.per_channel.iter()).fold(0f64, |m, v| m.max(v.abs()));
    let d = Outcome {
        id: "5d spatial correlation",
        pass: worst_r <= 0.1,
        detail: format!("max |rho| at distance >= 2 = {worst_r:.3} (<= 0.1); distance 1 for reference {near_r:.3}"),
    };
    vec![a, b, c, d]
}

/// Fraction of noise values that differ between two master seeds, and the
/// mean per-pixel std over 16 seeds relative to the oracle std.
fn diversity(gen: &Generator) -> (f64, f64) {
    let clean = procedural_clean(3, IMAGE_SIZE, IMAGE_SIZE, 0.1, 0.9, 2000).map(|v| (v * 255.0).round());
    let d = ControlDescriptor::new(Brandmark::S6, ISO_HIGH);
    let a = gen_noise(gen, &clean, &d, 1);
    let b = gen_noise(gen, &clean, &d, 2);
    let differ = a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count() as f64 / a.data.len() as f64;
    let draws: Vec<Image> = (0..16).map(|s| gen_noise(gen, &clean, &d, 100 + s)).collect();
    let p = oracle_params()[&ISO_HIGH];
    let mut ratio = 0.0;
    for i in 0..clean.data.len() {
        let vals: Vec<f64> = draws.iter().map(|m| m.data[i] as f64).collect();
        let mean = vals.iter().sum::<f64>() / 16.0;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0).sqrt();
        ratio += std / p.std(clean.data[i] as f64 / 255.0);
    }
    (differ, ratio / clean.data.len() as f64)
}

fn criterion_6(cfg_nin: &Generator, constant: &Generator) -> Outcome {
    let (d_nin, r_nin) = diversity(cfg_nin);
    let (d_const, r_const) = diversity(constant);
    Outcome {
        id: "6 diversity anti-pathology",
        pass: d_nin > 0.99 && !(d_const > 0.99) && r_const < 0.1,
        detail: format!(
            "CFG_NIN differs at {:.2}% of values (std/target {r_nin:.2}); IMAGE_3C_CONST differs at {:.2}%, std/target {r_const:.3} (< 0.1)",
            100.0 * d_nin,
            100.0 * d_const
        ),
    }
}

fn criterion_9(gen: &Generator) -> Outcome {
    let mut worst_sum = 0f64;
    for (h, w, t, o) in [(200, 200, 128, 25), (128, 128, 128, 25), (300, 170, 64, 20), (97, 250, 40, 12), (20, 9, 32, 6)] {
        for mode in [BlendMode::Midline, BlendMode::Linear] {
            let plan = plan_tiles(h, w, t, o).unwrap().with_blend(mode);
            worst_sum = plan.weight_sum().iter().fold(worst_sum, |m, s| m.max((s - 1.0).abs()));
        }
    }
    let (h, w) = (200, 200);
    let plan = plan_tiles(h, w, 128, 25).unwrap();
    let clean = Image::filled(3, h, w, 128.0);
    let d = ControlDescriptor::new(Brandmark::S6, ISO_HIGH);
    let seeds = 24;
    let draws: Vec<Image> =
        (0..seeds).map(|s| synthesize_tiled(&clean, &d, gen, &plan, 300 + s, &synth_opts()).unwrap().noise).collect();
    let mask = plan.overlap_mask();
    let (mut band, mut nb, mut inner, mut ni) = (0f64, 0usize, 0f64, 0usize);
    for c in 0..3 {
        for p in 0..h * w {
            let i = c * h * w + p;
            let vals: Vec<f64> = draws.iter().map(|m| m.data[i] as f64).collect();
            let mean = vals.iter().sum::<f64>() / seeds as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
            if mask[p] {
                band += var;
                nb += 1;
            } else {
                inner += var;
                ni += 1;
            }
        }
    }
    let ratio = (band / nb as f64) / (inner / ni as f64);
    Outcome {
        id: "9 tiling",
        pass: worst_sum <= 1e-6 && (ratio - 1.0).abs() <= 0.10,
        detail: format!("max |sum w - 1| = {worst_sum:.1e} (<= 1e-6); overlap/interior variance = {ratio:.3} (within 10%)"),
    }
}

fn main() {
    // `cargo test -- --list` and filters must not trigger the long run.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();
    let mut run = |f: &dyn Fn() -> Vec<Outcome>| {
        let start = Instant::now();
        let outs = f();
        let secs = start.elapsed().as_secs_f64();
        for o in outs {
            line(&o, secs);
            results.push(o.pass);
        }
    };
    run(&|| vec![criterion_1()]);
    run(&|| vec![criterion_2()]);
    run(&|| vec![criterion_3()]);
    run(&|| vec![criterion_4()]);
    run(&|| vec![criterion_7()]);
    run(&|| vec![criterion_8()]);

    if std::env::var_os("CAMNOISE_ACCEPTANCE_SKIP_TRAINED").is_some() {
        for id in ["5", "6", "9"] {
            println!("[SKIP] criterion {id}: trained generator not requested");
        }
        println!("acceptance: {}/{} criteria passed, trained criteria skipped", results.iter().filter(|&&p| p).count(), results.len());
        std::process::exit(1);
    }
    let nin = train_oracle(Variant::CfgNin);
    report_training("CFG_NIN", &nin);
    run(&|| criterion_5(&nin.gen));
    run(&|| vec![criterion_9(&nin.gen)]);
    let constant = train_oracle(Variant::Image3cConst);
    report_training("IMAGE_3C_CONST", &constant);
    run(&|| vec![criterion_6(&nin.gen, &constant.gen)]);

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
