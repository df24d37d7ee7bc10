//! Alternating least-squares GAN optimization with cosine learning-rate
//! decay, Adam, checkpointing and a CSV metrics log.
//!
//! Every random draw of step `k` comes from generators seeded by
//! `(seed, k)`, so a run resumed from a checkpoint continues exactly as an
//! uninterrupted one would.

mod adam;
mod dataset;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autograd::{backward, Var};
use crate::data::ColorSpace;
use crate::discriminator::{disc_forward, r1_penalty, Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{generator_forward, Generator, GeneratorConfig, NoiseSeeds};
use crate::losses::{adv_loss, disc_loss, style_loss_for, style_weight, PerceptualExtractor};
use crate::tensor::Tensor;

pub use adam::{Adam, AdamConfig};
pub use dataset::{Batch, TrainItem, TrainingSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub crop_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    /// Steps between checkpoints (0 keeps only the final one).
    pub checkpoint_every: usize,
    pub space: ColorSpace,
    /// Overrides the per-space style weight when set.
    pub style_weight: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            total_steps: 600_000,
            crop_size: 128,
            lr_start: 5e-5,
            lr_end: 1e-7,
            seed: 0,
            checkpoint_every: 10_000,
            space: ColorSpace::Srgb,
            style_weight: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 || self.crop_size == 0 {
            return Err(Error::Config("batch_size, total_steps and crop_size must be positive".into()));
        }
        if !(self.lr_start > self.lr_end && self.lr_end > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_start > lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }

    pub fn style_weight(&self) -> f64 {
        self.style_weight.unwrap_or_else(|| style_weight(self.space))
    }
}

/// Cosine decay from `lr_start` at step 0 to `lr_end` at `total_steps`.
pub fn lr_at_step(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Param(format!("step {step} beyond total_steps {}", cfg.total_steps)));
    }
    let t = step as f64 / cfg.total_steps as f64;
    Ok(cfg.lr_end + (cfg.lr_start - cfg.lr_end) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_disc: f64,
    pub loss_adv: f64,
    pub loss_style: f64,
}

pub const METRICS_HEADER: &str = "step,lr,loss_disc,loss_adv,loss_style";

impl LossRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.lr, self.loss_disc, self.loss_adv, self.loss_style)
    }
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!("{}: missing metrics header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| -> Result<f64> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Format(format!("bad metrics line {l:?}")))
            };
            Ok(LossRecord { step: num(0)? as usize, lr: num(1)?, loss_disc: num(2)?, loss_adv: num(3)?, loss_style: num(4)? })
        })
        .collect()
}

/// SplitMix64 finalizer; derives independent per-step seeds.
pub fn derive_seed(seed: u64, step: u64, purpose: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const PURPOSE_DATA: u64 = 1;
const PURPOSE_NOISE: u64 = 2;
const PURPOSE_R1: u64 = 3;

/// Generator, discriminator and optimizer state of one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub gen: Generator,
    pub disc: Discriminator,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Steps completed so far.
    pub step: usize,
    pub extractor: PerceptualExtractor,
    pub last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        extractor: PerceptualExtractor,
    ) -> Result<Self> {
        cfg.validate()?;
        if gen_cfg.image_channels != cfg.space.channels() || disc_cfg.image_channels != cfg.space.channels() {
            return Err(Error::Config(format!(
                "{:?} training needs {} image channels in both networks",
                cfg.space,
                cfg.space.channels()
            )));
        }
        if gen_cfg.control_channels != disc_cfg.control_channels {
            return Err(Error::Config("generator and discriminator disagree on control channels".into()));
        }
        let k = 1usize << disc_cfg.levels;
        if cfg.crop_size % k != 0 || cfg.crop_size < 16 {
            return Err(Error::Config(format!(
                "crop size {} must be at least 16 and divisible by 2^{}",
                cfg.crop_size, disc_cfg.levels
            )));
        }
        let gen = Generator::init(gen_cfg, derive_seed(cfg.seed, 0, 10))?;
        let disc = Discriminator::init(disc_cfg, derive_seed(cfg.seed, 0, 11))?;
        Ok(Trainer {
            gen_opt: Adam::new(cfg.adam, &gen.params),
            disc_opt: Adam::new(cfg.adam, &disc.params),
            cfg,
            gen,
            disc,
            step: 0,
            extractor,
            last_checkpoint: None,
        })
    }

    /// The batch of step `step`.
    pub fn batch_for(&self, data: &TrainingSet, step: usize) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, step as u64, PURPOSE_DATA));
        data.sample_batch(self.cfg.batch_size, self.cfg.crop_size, &mut rng)
    }

    fn noise_seeds(&self, step: usize) -> Result<NoiseSeeds> {
        NoiseSeeds::new(derive_seed(self.cfg.seed, step as u64, PURPOSE_NOISE), &self.gen.config)
    }

    /// Generator output for `batch`, with gradients tracked to the generator parameters.
    pub fn forward_fake(&self, batch: &Batch, step: usize) -> Result<(crate::params::ParamVars<f32>, Var<f32>)> {
        let s = batch.clean.shape();
        let noise = self.noise_seeds(step)?.sample::<f32>(&self.gen.config, s.n, s.h, s.w)?;
        let gp = self.gen.params.vars(true);
        let fake = generator_forward(
            &Var::constant(batch.clean.clone()),
            &Var::constant(batch.cm.clone()),
            &noise,
            &gp,
            &self.gen.config,
        )?;
        Ok((gp, fake))
    }

    /// One discriminator update on real vs. detached fake noise. Returns the loss.
    pub fn disc_update(&mut self, batch: &Batch, fake: &Tensor<f32>, lr: f64, step: usize) -> Result<f64> {
        let dp = self.disc.params.vars(true);
        let clean = Var::constant(batch.clean.clone());
        let cm = Var::constant(batch.cm.clone());
        let real = Var::constant(batch.noise.clone());
        let s_real = disc_forward(&real, &clean, &cm, &dp, &self.disc.config)?;
        let s_fake = disc_forward(&Var::constant(fake.clone()), &clean, &cm, &dp, &self.disc.config)?;
        let mut loss = disc_loss(&s_real, &s_fake)?;
        let value = loss.value().item() as f64;
        if self.disc.config.r1_gamma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, step as u64, PURPOSE_R1));
            let dir = Tensor::randn(batch.noise.shape(), 1.0, &mut rng);
            let r1 = r1_penalty(&batch.noise, &clean, &cm, &dp, &self.disc.config, &dir, 1e-3)?;
            loss = loss.add(&r1);
        }
        let mut grads = backward(&loss);
        let g = dp.gradients(&mut grads);
        drop(dp);
        self.disc_opt.update(&mut self.disc.params, &g, lr)?;
        Ok(value)
    }

    /// One generator update through the (already updated) discriminator.
    /// Returns `(adv, style)`.
    pub fn gen_update(
        &mut self,
        batch: &Batch,
        gp: crate::params::ParamVars<f32>,
        fake: &Var<f32>,
        lr: f64,
    ) -> Result<(f64, f64)> {
        let dp = self.disc.params.vars(false);
        let clean = Var::constant(batch.clean.clone());
        let cm = Var::constant(batch.cm.clone());
        let s_fake = disc_forward(fake, &clean, &cm, &dp, &self.disc.config)?;
        let adv = adv_loss(&s_fake)?;
        let ew = self.extractor.vars::<f32>();
        let style = style_loss_for(&Var::constant(batch.noise.clone()), fake, self.cfg.space, &self.extractor, &ew)?;
        let total = adv.add(&style.scale(self.cfg.style_weight()));
        let (a, s) = (adv.value().item() as f64, style.value().item() as f64);
        if !(a.is_finite() && s.is_finite()) {
            return Err(Error::Numerics {
                message: format!("non-finite generator loss at step {}", self.step),
                last_good: self.last_checkpoint.clone(),
            });
        }
        let mut grads = backward(&total);
        let g = gp.gradients(&mut grads);
        drop(gp);
        self.gen_opt.update(&mut self.gen.params, &g, lr)?;
        Ok((a, s))
    }

    /// Discriminator step, then generator step, on the batch of the current step.
    pub fn train_step(&mut self, data: &TrainingSet) -> Result<LossRecord> {
        let step = self.step;
        let lr = lr_at_step(step, &self.cfg)?;
        let batch = self.batch_for(data, step)?;
        let (gp, fake) = self.forward_fake(&batch, step)?;
        let fake_value = fake.value().clone();
        let loss_disc = self.disc_update(&batch, &fake_value, lr, step).map_err(|e| self.with_last_good(e))?;
        if !loss_disc.is_finite() {
            return Err(Error::Numerics {
                message: format!("non-finite discriminator loss at step {step}"),
                last_good: self.last_checkpoint.clone(),
            });
        }
        let (loss_adv, loss_style) = self.gen_update(&batch, gp, &fake, lr).map_err(|e| self.with_last_good(e))?;
        self.step += 1;
        Ok(LossRecord { step, lr, loss_disc, loss_adv, loss_style })
    }

    fn with_last_good(&self, e: Error) -> Error {
        match e {
            Error::Numerics { message, .. } => Error::Numerics { message, last_good: self.last_checkpoint.clone() },
            other => other,
        }
    }

    /// Trains until `total_steps`, appending to `out_dir/metrics.csv` and
    /// writing checkpoints when `out_dir` is given. Returns the new records.
    pub fn run(&mut self, data: &TrainingSet, out_dir: Option<&Path>) -> Result<Vec<LossRecord>> {
        self.run_until(data, out_dir, self.cfg.total_steps)
    }

    pub fn run_until(&mut self, data: &TrainingSet, out_dir: Option<&Path>, until: usize) -> Result<Vec<LossRecord>> {
        if data.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if data.space != self.cfg.space {
            return Err(Error::Config(format!(
                "training set is {:?} but the run is configured for {:?}",
                data.space, self.cfg.space
            )));
        }
        let until = until.min(self.cfg.total_steps);
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("metrics.csv");
                let fresh = !path.exists() || self.step == 0;
                let mut f = if fresh { fs::File::create(&path)? } else { fs::OpenOptions::new().append(true).open(&path)? };
                if fresh {
                    writeln!(f, "{METRICS_HEADER}")?;
                }
                Some(f)
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < until {
            let rec = self.train_step(data)?;
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", rec.csv_line())?;
            }
            if rec.step % 500 == 0 {
                log::info!(
                    "step {} lr {:.3e} disc {:.4} adv {:.4} style {:.4e}",
                    rec.step,
                    rec.lr,
                    rec.loss_disc,
                    rec.loss_adv,
                    rec.loss_style
                );
            }
            records.push(rec);
            if let Some(dir) = out_dir {
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 {
                    let path = dir.join(format!("checkpoint_{:08}.ckpt", self.step));
                    self.save_checkpoint(&path)?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.save_checkpoint(&dir.join("final.ckpt"))?;
        }
        Ok(records)
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({
            "step": self.step,
            "train": self.cfg,
            "extractor": self.extractor.provenance,
        }));
        self.gen.write_into(&mut a, "gen/")?;
        self.disc.write_into(&mut a, "disc/")?;
        self.gen_opt.write_into(&mut a, "opt/gen/");
        self.disc_opt.write_into(&mut a, "opt/disc/");
        a.save(path)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    /// Restores a run; the extractor is supplied by the caller.
    pub fn load_checkpoint(path: &Path, extractor: PerceptualExtractor) -> Result<Self> {
        let a = Archive::load(path)?;
        let cfg: TrainConfig = serde_json::from_value(
            a.meta.get("train").cloned().ok_or_else(|| Error::Format("checkpoint lacks train config".into()))?,
        )?;
        let step = a.meta.get("step").and_then(|v| v.as_u64()).ok_or_else(|| Error::Format("checkpoint lacks step".into()))?
            as usize;
        let gen = Generator::read_from(&a, "gen/")?;
        let disc = Discriminator::read_from(&a, "disc/")?;
        let gen_opt = Adam::read_from(&a, "opt/gen/", cfg.adam, &gen.params)?;
        let disc_opt = Adam::read_from(&a, "opt/disc/", cfg.adam, &disc.params)?;
        Ok(Trainer { cfg, gen, disc, gen_opt, disc_opt, step, extractor, last_checkpoint: Some(path.to_path_buf()) })
    }
}

/// Uniform integer in `0..n`.
pub(crate) fn pick<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
