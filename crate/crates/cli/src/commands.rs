use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use camnoise::data::{
    compute_residual, load_instance, load_instance_pairs, make_split, pack_raw, parse_instance_dir, read_list_file,
    read_png_rgb, read_raw_bin, unpack_raw, write_png_rgb, write_raw_bin, ColorSpace, ControlDescriptor,
    ControlNormalization, DatasetSplit, EvalMode, Image, ImagePair, InstanceMeta, PatchRecord, SplitLists,
};
use camnoise::evaluation::{
    curve_csv, evaluate_em1, evaluate_em2, hist_em2, spatial_correlation, temporal_variance, variance_vs_intensity,
    EvalMap, GeneratorSampler, Histogram, HistogramSpec,
};
use camnoise::generator::Generator;
use camnoise::inference::{plan_tiles, synthesize_tiled, SynthOptions};
use camnoise::losses::PerceptualExtractor;
use camnoise::noise_models::{procedural_clean, synth_oracle_dataset};
use camnoise::training::{derive_seed, Trainer, TrainingSet};
use camnoise::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, DATASET_ROOT_ENV};

const MANIFEST: &str = "manifest.json";
const PURPOSE_SYNTH: u64 = 30;

fn dataset_root(cfg: &RunConfig) -> Result<PathBuf> {
    let root = std::env::var_os(DATASET_ROOT_ENV).map(PathBuf::from).or_else(|| cfg.dataset_root.clone());
    let root = root.ok_or_else(|| Error::Config(format!("no dataset_root given (config or {DATASET_ROOT_ENV})")))?;
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} does not exist", root.display())));
    }
    Ok(root)
}

fn file_names(space: ColorSpace) -> (&'static str, &'static str, &'static str) {
    match space {
        ColorSpace::Srgb => ("GT_SRGB_010.png", "NOISY_SRGB_010.png", "png"),
        ColorSpace::Raw => ("GT_RAW_010.bin", "NOISY_RAW_010.bin", "bin"),
    }
}

/// Writes an image of `space` to `path` (raw images are unpacked to a mosaic).
fn write_image(path: &Path, img: &Image, space: ColorSpace) -> Result<()> {
    match space {
        ColorSpace::Srgb => write_png_rgb(path, img),
        ColorSpace::Raw => write_raw_bin(path, &unpack_raw(img)?),
    }
}

fn write_pair(dir: &Path, pair: &ImagePair) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (gt, noisy, _) = file_names(pair.space);
    write_image(&dir.join(gt), &pair.clean, pair.space)?;
    write_image(&dir.join(noisy), &pair.noisy, pair.space)
}

/// Writes the synthetic oracle dataset and returns its root and, for EM-1,
/// the generated train/test lists.
fn prepare_oracle(cfg: &RunConfig) -> Result<(PathBuf, Option<SplitLists>)> {
    let oracle = cfg.oracle.as_ref().expect("caller checked");
    if oracle.params.is_empty() || oracle.images == 0 {
        return Err(Error::Config("oracle needs at least one ISO and one image".into()));
    }
    let root = cfg.output_dir.join("data");
    let descriptors: Vec<ControlDescriptor> =
        oracle.params.keys().map(|&iso| ControlDescriptor::new(oracle.brandmark, iso)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_test = ((oracle.images as f64 * oracle.test_fraction).round() as usize).clamp(1, oracle.images);
    let mut lists = SplitLists::default();
    for i in 0..oracle.images {
        let clean = procedural_clean(
            cfg.space.channels(),
            oracle.height,
            oracle.width,
            oracle.lo,
            oracle.hi,
            derive_seed(cfg.seed, i as u64, 40),
        );
        let pairs = synth_oracle_dataset(&[clean], &descriptors, &oracle.params, cfg.space, &mut rng)?;
        for (j, pair) in pairs.iter().enumerate() {
            let d = &pair.descriptor;
            let name = format!("{:04}_{:03}_{}_{:05}_00001_00001_N", i + 1, j + 1, d.brandmark, d.iso);
            write_pair(&root.join(&name), pair)?;
            if i >= oracle.images - n_test { lists.test.push(name) } else { lists.train.push(name) }
        }
    }
    fs::write(cfg.output_dir.join("oracle_params.json"), serde_json::to_string_pretty(&oracle.params)?)?;
    Ok((root, (cfg.mode == EvalMode::Em1).then_some(lists)))
}

/// Builds the dataset split (and, in oracle mode, the dataset itself).
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    let (root, generated) = if cfg.oracle.is_some() { prepare_oracle(cfg)? } else { (dataset_root(cfg)?, None) };
    let lists = match (&cfg.split_lists, generated) {
        (Some(files), _) => Some(SplitLists { train: read_list_file(&files.train)?, test: read_list_file(&files.test)? }),
        (None, g) => g,
    };
    let pairs = load_instance_pairs(&root)?;
    if pairs.is_empty() {
        return Err(Error::Ingest(format!("no instance folders under {}", root.display())));
    }
    let metas = pairs
        .iter()
        .map(|(name, p)| InstanceMeta::new(name, p.clean.height, p.clean.width))
        .collect::<Result<Vec<_>>>()?;
    let crop = match &cfg.oracle {
        Some(o) => cfg.split_crop.min(o.height).min(o.width),
        None => cfg.split_crop,
    };
    let split = make_split(&metas, cfg.mode, cfg.seed, crop, lists.as_ref())?;
    let instances = |records: &[PatchRecord]| -> Vec<String> {
        records.iter().map(|r| r.instance.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    };
    let (train_instances, test_instances) = match (&lists, cfg.mode) {
        (Some(l), EvalMode::Em1) => (l.train.clone(), l.test.clone()),
        _ => (instances(&split.train), instances(&split.test)),
    };
    log::info!("{} train / {} test crops", split.train.len(), split.test.len());
    let manifest = Manifest { root, space: cfg.space, train_instances, test_instances, split };
    let path = cfg.output_dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Written by `prepare`: where the data lives and which part trains/tests.
#[derive(Serialize, Deserialize)]
struct Manifest {
    root: PathBuf,
    space: ColorSpace,
    /// EM-1: the list files; EM-2: instances contributing crops.
    train_instances: Vec<String>,
    test_instances: Vec<String>,
    split: DatasetSplit,
}

fn read_manifest(cfg: &RunConfig) -> Result<Option<Manifest>> {
    let path = cfg.output_dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(&path)?)?))
}

/// The manifest's share of `pairs`: whole listed instances under EM-1, the
/// recorded crops (named `instance@y_x`) under EM-2.
fn select(pairs: Vec<(String, ImagePair)>, m: &Manifest, test: bool) -> Result<Vec<(String, ImagePair)>> {
    match m.split.mode {
        EvalMode::Em1 => {
            let keep: BTreeSet<&String> = if test { &m.test_instances } else { &m.train_instances }.iter().collect();
            Ok(pairs.into_iter().filter(|(n, _)| keep.contains(n)).collect())
        }
        EvalMode::Em2 => {
            let by_name: BTreeMap<&str, &ImagePair> = pairs.iter().map(|(n, p)| (n.as_str(), p)).collect();
            let records = if test { &m.split.test } else { &m.split.train };
            let mut out = Vec::with_capacity(records.len());
            for r in records {
                let Some(p) = by_name.get(r.instance.as_str()) else { continue };
                let crop = ImagePair::new(
                    p.clean.crop(r.y, r.x, r.size, r.size)?,
                    p.noisy.crop(r.y, r.x, r.size, r.size)?,
                    p.space,
                    p.descriptor.clone(),
                )?;
                out.push((format!("{}@{}_{}", r.instance, r.y, r.x), crop));
            }
            Ok(out)
        }
    }
}

/// Trains (or resumes) a model on the prepared training instances.
pub fn cmd_train(cfg: &mut RunConfig) -> Result<PathBuf> {
    let manifest = read_manifest(cfg)?;
    let root = match &manifest {
        Some(m) => m.root.clone(),
        None => dataset_root(cfg)?,
    };
    let mut pairs = load_instance_pairs(&root)?;
    if let Some(m) = &manifest {
        pairs = select(pairs, m, false)?;
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no training instances".into()));
    }
    if let Some((name, p)) = pairs.iter().find(|(_, p)| p.space != cfg.space) {
        return Err(Error::Config(format!("{name} is {:?} data but the run is configured for {:?}", p.space, cfg.space)));
    }
    let pairs: Vec<ImagePair> = pairs.into_iter().map(|(_, p)| p).collect();
    let norm = cfg
        .normalization
        .get_or_insert_with(|| ControlNormalization::from_descriptors(pairs.iter().map(|p| &p.descriptor)))
        .clone();
    cfg.emit("train")?;
    let data = TrainingSet::from_pairs(&pairs, cfg.mode, &norm)?;
    let extractor = PerceptualExtractor::from_source(&cfg.extractor)?;
    let mut trainer = match &cfg.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(Error::Config(format!("checkpoint {} not found", path.display())));
            }
            let mut t = Trainer::load_checkpoint(path, extractor)?;
            t.cfg.total_steps = cfg.train.total_steps;
            t
        }
        None => Trainer::new(cfg.train.clone(), cfg.generator.clone(), cfg.discriminator.clone(), extractor)?,
    };
    trainer.run(&data, Some(&cfg.output_dir))?;
    Ok(cfg.output_dir.join("final.ckpt"))
}

/// Clean input, its descriptor and the name its outputs are filed under.
fn read_input(path: &Path, cfg: &RunConfig) -> Result<(Image, ControlDescriptor, String)> {
    if path.is_dir() {
        let pair = load_instance(path)?;
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("input").to_string();
        return Ok((pair.clean, pair.descriptor, name));
    }
    let img = match cfg.space {
        ColorSpace::Srgb => read_png_rgb(path)?,
        ColorSpace::Raw => pack_raw(&read_raw_bin(path)?)?,
    };
    let stem = path.file_stem().and_then(|n| n.to_str()).unwrap_or("input").to_string();
    let descriptor = path
        .parent()
        .and_then(|p| parse_instance_dir(p).ok())
        .map(|n| n.descriptor)
        .unwrap_or_else(|| cfg.synthesis.descriptor.clone());
    Ok((img, descriptor, stem))
}

fn load_generator(cfg: &RunConfig) -> Result<Generator> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::Config("no checkpoint given".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display())));
    }
    let gen = Generator::load(path)?;
    if gen.config.image_channels != cfg.space.channels() || gen.config.control_channels != cfg.mode.control_channels() {
        return Err(Error::Config(format!(
            "checkpoint expects {} image and {} control channels; run is {:?}/{:?}",
            gen.config.image_channels, gen.config.control_channels, cfg.space, cfg.mode
        )));
    }
    Ok(gen)
}

/// Noise map scaled by 10 for viewing: sRGB around mid-grey, raw as floats.
fn noise_view(noise: &Image, space: ColorSpace) -> Image {
    match space {
        ColorSpace::Srgb => noise.map(|n| (128.0 + 10.0 * 255.0 * n).round().clamp(0.0, 255.0)),
        ColorSpace::Raw => noise.map(|n| 10.0 * n),
    }
}

/// Adds synthetic noise to each input; writes `GT_`, `NOISY_` and
/// `NOISEMAP_` files into `synth/<name>/`.
pub fn cmd_synthesize(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let gen = load_generator(cfg)?;
    cfg.emit("synthesize")?;
    let opts = SynthOptions {
        space: cfg.space,
        mode: cfg.mode,
        norm: cfg.normalization.clone().unwrap_or_default(),
    };
    let (gt, noisy_name, ext) = file_names(cfg.space);
    let mut out = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let (clean, descriptor, name) = read_input(input, cfg)?;
        let plan = plan_tiles(clean.height, clean.width, cfg.synthesis.tile, cfg.synthesis.overlap)?
            .with_blend(cfg.synthesis.blend);
        log::info!("{name}: {} tiles", plan.num_tiles());
        let s = synthesize_tiled(&clean, &descriptor, &gen, &plan, derive_seed(cfg.seed, i as u64, PURPOSE_SYNTH), &opts)?;
        let dir = cfg.output_dir.join("synth").join(&name);
        fs::create_dir_all(&dir)?;
        write_image(&dir.join(gt), &clean, cfg.space)?;
        write_image(&dir.join(noisy_name), &s.noisy, cfg.space)?;
        write_image(&dir.join(format!("NOISEMAP_x10.{ext}")), &noise_view(&s.noise, cfg.space), cfg.space)?;
        out.push(dir);
    }
    Ok(out)
}

fn eval_maps(pairs: Vec<(String, ImagePair)>) -> Result<Vec<(EvalMap, Image)>> {
    let mut out = Vec::new();
    for (name, pair) in pairs {
        let noise = compute_residual(&pair)?;
        let unit = pair.clean.map(|v| v / pair.space.scale());
        out.push((EvalMap { noise, brandmark: pair.descriptor.brandmark, source: name }, unit));
    }
    Ok(out)
}

fn hist_all(maps: &[EvalMap], space: ColorSpace) -> Histogram {
    let values = maps.iter().flat_map(|m| m.noise.data.iter().map(|&v| v as f64));
    match space {
        ColorSpace::Srgb => hist_em2(values),
        ColorSpace::Raw => Histogram::from_values(values, HistogramSpec::em1_raw()),
    }
}

const OFFSETS: [(i32, i32); 6] = [(0, 1), (1, 0), (1, 1), (0, 2), (2, 0), (2, 2)];

/// Compares residuals of `synth_dir` against `real_dir` instance by
/// instance (restricted to the manifest's test set when one exists).
pub fn cmd_evaluate(cfg: &RunConfig, real_dir: &Path, synth_dir: &Path) -> Result<PathBuf> {
    let manifest = read_manifest(cfg)?;
    let load = |dir: &Path| -> Result<Vec<(String, ImagePair)>> {
        let pairs = load_instance_pairs(dir)?;
        match &manifest {
            Some(m) => select(pairs, m, true),
            None => Ok(pairs),
        }
    };
    let real = eval_maps(load(real_dir)?)?;
    let synth = eval_maps(load(synth_dir)?)?;
    if real.is_empty() {
        return Err(Error::InsufficientData(format!("no instances to evaluate under {}", real_dir.display())));
    }
    let by_name: BTreeMap<&str, &(EvalMap, Image)> = synth.iter().map(|e| (e.0.source.as_str(), e)).collect();
    let mut real_maps = Vec::new();
    let mut synth_maps = Vec::new();
    let mut cleans = Vec::new();
    for (m, clean) in &real {
        let s = by_name
            .get(m.source.as_str())
            .ok_or_else(|| Error::Pairing(format!("{} has no synthetic counterpart", m.source)))?;
        real_maps.push(m.clone());
        synth_maps.push(s.0.clone());
        cleans.push(clean.clone());
    }
    let report = match cfg.mode {
        EvalMode::Em1 => evaluate_em1(&real_maps, &synth_maps, cfg.space, cfg.evaluation.patch_size)?,
        EvalMode::Em2 => evaluate_em2(&real_maps, &synth_maps)?,
    };
    let dir = cfg.output_dir.join("evaluation");
    fs::create_dir_all(&dir)?;
    cfg.emit("evaluate")?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(dir.join("hist_real.csv"), hist_all(&real_maps, cfg.space).to_csv())?;
    fs::write(dir.join("hist_synth.csv"), hist_all(&synth_maps, cfg.space).to_csv())?;
    let unit = |m: &EvalMap| m.noise.map(|v| v / cfg.space.scale());
    if cfg.evaluation.curve {
        let names = cfg.space.channel_names();
        for (tag, maps) in [("real", &real_maps), ("synth", &synth_maps)] {
            let pairs: Vec<(Image, Image)> = cleans.iter().cloned().zip(maps.iter().map(unit)).collect();
            let curve = variance_vs_intensity(&pairs, cfg.evaluation.curve_bins)?;
            fs::write(dir.join(format!("curve_{tag}.csv")), curve_csv(&curve, names))?;
        }
    }
    if cfg.evaluation.correlation {
        let mut csv = String::from("source,dy,dx");
        for n in cfg.space.channel_names() {
            csv.push_str(&format!(",rho_{n}"));
        }
        csv.push('\n');
        for (tag, maps) in [("real", &real_maps), ("synth", &synth_maps)] {
            let maps: Vec<Image> = maps.iter().map(|m| m.noise.clone()).collect();
            match spatial_correlation(&maps, &OFFSETS) {
                Ok(rows) => {
                    for r in rows {
                        csv.push_str(&format!("{tag},{},{}", r.offset.0, r.offset.1));
                        for v in r.per_channel {
                            csv.push_str(&format!(",{v}"));
                        }
                        csv.push('\n');
                    }
                }
                Err(Error::InsufficientData(msg)) => log::warn!("correlation skipped for {tag}: {msg}"),
                Err(e) => return Err(e),
            }
        }
        fs::write(dir.join("correlation.csv"), csv)?;
    }
    if cfg.evaluation.temporal {
        let gen = load_generator(cfg)?;
        let sampler = GeneratorSampler {
            gen: &gen,
            mode: cfg.mode,
            norm: cfg.normalization.clone().unwrap_or_default(),
            batch: 16,
        };
        let size = 16;
        let flat = Image::filled(cfg.space.channels(), size, size, cfg.evaluation.temporal_intensity);
        let t = temporal_variance(&sampler, &flat, &cfg.synthesis.descriptor, cfg.evaluation.temporal_draws, cfg.seed)?;
        let mut csv = String::from("channel,std\n");
        for (n, s) in cfg.space.channel_names().iter().zip(&t.std) {
            csv.push_str(&format!("{n},{s}\n"));
        }
        fs::write(dir.join("temporal.csv"), csv)?;
    }
    Ok(dir.join("report.json"))
}

fn find_reports(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            find_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "report.json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Markdown table over every `report.json` below `run_dir`, one row per
/// report, ordered by path.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    if !run_dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", run_dir.display())));
    }
    let mut paths = Vec::new();
    find_reports(run_dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        return Ok("no reports found\n".into());
    }
    let mut rows = Vec::new();
    let mut brands = BTreeSet::new();
    for p in &paths {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?)?;
        camnoise::evaluation::validate_report_json(&v)?;
        let name = p
            .parent()
            .and_then(|d| d.strip_prefix(run_dir).ok())
            .map(|d| d.display().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| ".".into());
        let per: BTreeMap<String, f64> = serde_json::from_value(v["per_brandmark"].clone())?;
        brands.extend(per.keys().cloned());
        rows.push((name, v["mode"].as_str().unwrap_or_default().to_string(), v["aggregate"].as_f64().unwrap_or(f64::NAN), per));
    }
    let mut s = String::from("| run | mode | aggregate |");
    for b in &brands {
        s.push_str(&format!(" {b} |"));
    }
    s.push_str("\n|---|---|---|");
    s.push_str(&"---|".repeat(brands.len()));
    s.push('\n');
    for (name, mode, agg, per) in rows {
        s.push_str(&format!("| {name} | {mode} | {agg:.6} |"));
        for b in &brands {
            match per.get(b) {
                Some(v) => s.push_str(&format!(" {v:.6} |")),
                None => s.push_str(" - |"),
            }
        }
        s.push('\n');
    }
    Ok(s)
}
