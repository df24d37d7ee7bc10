//! Conditional discriminator over (noise map, clean image, control map).
//!
//! Stem conv, then residual blocks that each halve the resolution, global
//! average pooling and a two-layer head producing one score per sample.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::PadMode;
use crate::params::{ParamSpec, ParamStore, ParamVars};
use crate::tensor::{Scalar, Tensor};

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    /// Residual downsampling blocks.
    pub levels: usize,
    /// Width cap; channels double per level up to this value. Equal to
    /// `base_width` for a constant-width stack.
    pub max_width: usize,
    pub image_channels: usize,
    pub control_channels: usize,
    /// Append a minibatch standard deviation channel before pooling.
    pub minibatch_std: bool,
    /// Weight of the R1 penalty on real samples (0 disables it).
    pub r1_gamma: f64,
    /// Factor applied to the noise map at the stem; residuals are small next
    /// to clean intensities.
    pub noise_gain: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_width: 32,
            levels: 3,
            max_width: 32,
            image_channels: 3,
            control_channels: 6,
            minibatch_std: false,
            r1_gamma: 0.0,
            noise_gain: 10.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.levels == 0 || self.image_channels == 0 {
            return Err(Error::Config("discriminator widths and levels must be positive".into()));
        }
        if !(self.noise_gain > 0.0 && self.noise_gain.is_finite()) {
            return Err(Error::Config("noise_gain must be positive".into()));
        }
        if !(self.r1_gamma >= 0.0) {
            return Err(Error::Config("r1_gamma must be nonnegative".into()));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        let cap = self.max_width.max(self.base_width);
        (self.base_width << level.min(16)).min(cap)
    }

    pub fn input_channels(&self) -> usize {
        2 * self.image_channels + self.control_channels
    }
}

pub fn param_specs(config: &DiscriminatorConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let gain = 2f64.sqrt();
    let w0 = config.width(0);
    let mut specs = vec![
        ParamSpec::conv("stem.weight", w0, config.input_channels(), 3, gain),
        ParamSpec::vector("stem.bias", w0, 0.0),
    ];
    for l in 0..config.levels {
        let (cin, cout) = (config.width(l), config.width(l + 1));
        specs.push(ParamSpec::conv(format!("block.{l}.conv1.weight"), cin, cin, 3, gain));
        specs.push(ParamSpec::vector(format!("block.{l}.conv1.bias"), cin, 0.0));
        specs.push(ParamSpec::conv(format!("block.{l}.conv2.weight"), cout, cin, 3, gain));
        specs.push(ParamSpec::vector(format!("block.{l}.conv2.bias"), cout, 0.0));
        specs.push(ParamSpec::conv(format!("block.{l}.skip.weight"), cout, cin, 1, 1.0));
    }
    let top = config.width(config.levels);
    let head_in = top + config.minibatch_std as usize;
    specs.push(ParamSpec::conv("head.fc.weight", top, head_in, 1, gain));
    specs.push(ParamSpec::vector("head.fc.bias", top, 0.0));
    specs.push(ParamSpec::conv("head.out.weight", 1, top, 1, 1.0));
    specs.push(ParamSpec::vector("head.out.bias", 1, 0.0));
    Ok(specs)
}

/// One score per sample, shaped `[n, 1, 1, 1]`.
pub fn disc_forward<T: Scalar>(
    noise_map: &Var<T>,
    clean: &Var<T>,
    cm: &Var<T>,
    p: &ParamVars<T>,
    config: &DiscriminatorConfig,
) -> Result<Var<T>> {
    let s = noise_map.shape();
    if clean.shape() != s || cm.shape() != s.with_c(config.control_channels) || s.c != config.image_channels {
        return Err(Error::Shape(format!(
            "discriminator inputs disagree: noise {s}, clean {}, control {}",
            clean.shape(),
            cm.shape()
        )));
    }
    let k = 1usize << config.levels;
    if s.h % k != 0 || s.w % k != 0 {
        return Err(Error::Shape(format!("{}x{} is not divisible by 2^{}", s.h, s.w, config.levels)));
    }
    let x = Var::concat_channels(&[&noise_map.scale(config.noise_gain), clean, cm]);
    let mut h = x.conv2d(p.get("stem.weight"), Some(p.get("stem.bias")), PadMode::Zero).leaky_relu(SLOPE);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for l in 0..config.levels {
        let w = |n: &str| p.get(&format!("block.{l}.{n}"));
        let main = h
            .conv2d(w("conv1.weight"), Some(w("conv1.bias")), PadMode::Zero)
            .leaky_relu(SLOPE)
            .conv2d(w("conv2.weight"), Some(w("conv2.bias")), PadMode::Zero)
            .leaky_relu(SLOPE)
            .avg_pool2();
        let skip = h.avg_pool2().conv2d(w("skip.weight"), None, PadMode::Zero);
        h = main.add(&skip).scale(inv_sqrt2);
    }
    if config.minibatch_std {
        h = h.minibatch_std(1e-8);
    }
    Ok(h
        .global_avg_pool()
        .conv2d(p.get("head.fc.weight"), Some(p.get("head.fc.bias")), PadMode::Zero)
        .leaky_relu(SLOPE)
        .conv2d(p.get("head.out.weight"), Some(p.get("head.out.bias")), PadMode::Zero))
}

/// Finite-difference estimate of the R1 penalty `γ/2 · E‖∇ₓD(x)‖²` on real
/// noise maps: for a Gaussian direction `v`, `((D(x + h v) - D(x)) / h)²` has
/// expectation `‖∇ₓD‖²`. Differentiable with respect to the parameters.
pub fn r1_penalty<T: Scalar>(
    real_noise: &Tensor<T>,
    clean: &Var<T>,
    cm: &Var<T>,
    p: &ParamVars<T>,
    config: &DiscriminatorConfig,
    direction: &Tensor<T>,
    h: f64,
) -> Result<Var<T>> {
    let x = Var::constant(real_noise.clone());
    let mut shifted = real_noise.clone();
    for (v, d) in shifted.data_mut().iter_mut().zip(direction.data()) {
        *v += T::of(h) * *d;
    }
    let d0 = disc_forward(&x, clean, cm, p, config)?;
    let d1 = disc_forward(&Var::constant(shifted), clean, cm, p, config)?;
    Ok(d1.sub(&d0).scale(1.0 / h).square().mean().scale(config.r1_gamma / 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore<f32>,
}

impl Discriminator {
    pub fn init(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        let specs = param_specs(&config)?;
        let params = ParamStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Discriminator { config, params })
    }

    pub fn score(&self, noise_map: &Tensor<f32>, clean: &Tensor<f32>, cm: &Tensor<f32>) -> Result<Vec<f32>> {
        let p = self.params.vars(false);
        let out = disc_forward(
            &Var::constant(noise_map.clone()),
            &Var::constant(clean.clone()),
            &Var::constant(cm.clone()),
            &p,
            &self.config,
        )?;
        Ok(out.value().data().to_vec())
    }

    pub fn write_into(&self, archive: &mut Archive, prefix: &str) -> Result<()> {
        archive.meta[format!("{prefix}config")] = serde_json::to_value(&self.config)?;
        for (name, t) in self.params.iter() {
            archive.insert(format!("{prefix}{name}"), t);
        }
        Ok(())
    }

    pub fn read_from(archive: &Archive, prefix: &str) -> Result<Self> {
        let cfg = archive
            .meta
            .get(format!("{prefix}config"))
            .ok_or_else(|| Error::Format("archive holds no discriminator config".into()))?;
        let config: DiscriminatorConfig = serde_json::from_value(cfg.clone())?;
        let specs = param_specs(&config)?;
        let mut params = ParamStore::default();
        for spec in &specs {
            let t = archive
                .arrays
                .get(&format!("{prefix}{}", spec.name))
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks {prefix}{}", spec.name)))?;
            params.insert(spec.name.clone(), t.clone())?;
        }
        params.validate(&specs)?;
        Ok(Discriminator { config, params })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Discriminator::read_from(&Archive::load(path)?, "disc/")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::tensor::Shape;

    fn cfg() -> DiscriminatorConfig {
        DiscriminatorConfig { base_width: 8, max_width: 8, levels: 2, ..Default::default() }
    }

    fn rnd<T: Scalar>(shape: Shape, seed: u64) -> Tensor<T> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn one_score_per_sample_and_batch_independence() {
        let d = Discriminator::init(cfg(), 0).unwrap();
        let s = Shape::new(3, 3, 8, 8);
        let noise = rnd::<f32>(s, 1);
        let clean = rnd::<f32>(s, 2);
        let cm = rnd::<f32>(s.with_c(6), 3);
        let scores = d.score(&noise, &clean, &cm).unwrap();
        assert_eq!(scores.len(), 3);
        let perm = [2, 0, 1];
        let pick = |t: &Tensor<f32>| {
            let parts: Vec<Tensor<f32>> = perm.iter().map(|&i| t.take_sample(i)).collect();
            Tensor::stack(&parts.iter().collect::<Vec<_>>()).unwrap()
        };
        let permuted = d.score(&pick(&noise), &pick(&clean), &pick(&cm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((permuted[k] - scores[i]).abs() <= 1e-6 * (1.0 + scores[i].abs()));
        }
    }

    #[test]
    fn indivisible_resolution_rejected() {
        let d = Discriminator::init(cfg(), 0).unwrap();
        let s = Shape::new(1, 3, 10, 8);
        let r = d.score(&Tensor::zeros(s), &Tensor::zeros(s), &Tensor::zeros(s.with_c(6)));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn widths_double_up_to_cap() {
        let c = DiscriminatorConfig { base_width: 8, max_width: 16, levels: 3, ..Default::default() };
        assert_eq!((0..4).map(|l| c.width(l)).collect::<Vec<_>>(), vec![8, 16, 16, 16]);
    }

    #[test]
    fn gradient_wrt_noise_map() {
        let c = cfg();
        let mut store = ParamStore::<f64>::init(&param_specs(&c).unwrap(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let s = Shape::new(2, 3, 16, 16);
        store.insert("noise", rnd::<f64>(s, 5).map(|v| v * 0.1)).unwrap();
        let clean = Var::constant(rnd::<f64>(s, 6));
        let cm = Var::constant(rnd::<f64>(s.with_c(6), 7));
        let r = check_gradients(&store, 1e-5, 6, |p| {
            Ok(disc_forward(p.get("noise"), &clean, &cm, p, &c)?.square().mean())
        })
        .unwrap();
        assert!(r.max_rel_err <= 1e-3, "{r:?}");
    }

    #[test]
    fn r1_estimate_tracks_gradient_norm() {
        // For a single sample, E_v[(∇D·v)²] = ‖∇D‖²; average many directions.
        let c = DiscriminatorConfig { r1_gamma: 2.0, ..cfg() };
        let store = ParamStore::<f64>::init(&param_specs(&c).unwrap(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let s = Shape::new(1, 3, 8, 8);
        let x = rnd::<f64>(s, 9);
        let clean = Var::constant(rnd::<f64>(s, 10));
        let cm = Var::constant(rnd::<f64>(s.with_c(6), 11));
        let xv = Var::param(x.clone());
        let p = store.vars(false);
        let score = disc_forward(&xv, &clean, &cm, &p, &c).unwrap();
        let g = crate::autograd::backward(&score);
        let norm2: f64 = g.get(&xv).unwrap().data().iter().map(|v| v * v).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = 2000;
        let est: f64 = (0..trials)
            .map(|_| {
                let v = Tensor::<f64>::randn(s, 1.0, &mut rng);
                r1_penalty(&x, &clean, &cm, &p, &c, &v, 1e-6).unwrap().value().item()
            })
            .sum::<f64>()
            / trials as f64;
        assert!((est - norm2).abs() <= 0.1 * norm2, "estimate {est} vs {norm2}");
    }
}
