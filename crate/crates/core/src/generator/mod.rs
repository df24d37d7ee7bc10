//! The conditional noise generator and its ablation variants.
//!
//! The default wiring keeps the encoder free of randomness: clean image and
//! control map go through SNAF blocks, an `m`-channel Gaussian map is
//! concatenated once at the encoder/decoder transition, and every decoder
//! block receives the mirrored clean encoder features through a
//! concatenation skip before a SNAF-NI block injects its own one-channel
//! noise. No layer changes the spatial resolution.

mod blocks;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::PadMode;
use crate::params::{ParamSpec, ParamStore, ParamVars};
use crate::tensor::{Scalar, Shape, Tensor};

pub use blocks::{block_specs, snaf_forward, snaf_ni_forward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "CFG_NIN")]
    CfgNin,
    #[serde(rename = "IMAGE_3C")]
    Image3c,
    #[serde(rename = "IMAGE_3C_CONST")]
    Image3cConst,
    #[serde(rename = "IMAGE_96C")]
    Image96c,
    #[serde(rename = "LATENT_96C")]
    Latent96c,
    #[serde(rename = "FULL_NIN")]
    FullNin,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::CfgNin, Variant::Image3c, Variant::Image3cConst, Variant::Image96c, Variant::Latent96c, Variant::FullNin];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CfgNin => "CFG_NIN",
            Variant::Image3c => "IMAGE_3C",
            Variant::Image3cConst => "IMAGE_3C_CONST",
            Variant::Image96c => "IMAGE_96C",
            Variant::Latent96c => "LATENT_96C",
            Variant::FullNin => "FULL_NIN",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_uppercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown generator variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Feature channels throughout the network.
    pub width: usize,
    pub blocks_per_stage: usize,
    /// Encoder stages; the decoder mirrors them.
    pub stages: usize,
    /// Channels `m` of the concatenated Gaussian map.
    pub seed_channels: usize,
    pub variant: Variant,
    /// 3 for sRGB, 4 for packed raw.
    pub image_channels: usize,
    /// Planes of the control map.
    pub control_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            width: 96,
            blocks_per_stage: 2,
            stages: 6,
            seed_channels: 96,
            variant: Variant::CfgNin,
            image_channels: 3,
            control_channels: 6,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("blocks_per_stage", self.blocks_per_stage),
            ("stages", self.stages),
            ("seed_channels", self.seed_channels),
            ("image_channels", self.image_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("generator {name} must be positive")));
            }
        }
        Ok(())
    }

    /// Blocks on each side of the transition.
    pub fn blocks_per_side(&self) -> usize {
        self.stages * self.blocks_per_stage
    }
}

/// Where a variant draws its randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    /// Gaussian channels concatenated to the network input (0 for none).
    pub input_noise_channels: usize,
    /// Input noise is one scalar per channel, replicated spatially.
    pub input_noise_const: bool,
    /// Gaussian channels concatenated at the transition (0 for none).
    pub transition_noise_channels: usize,
    pub encoder_injection: bool,
    pub decoder_injection: bool,
}

impl Wiring {
    pub fn injection_blocks(&self, config: &GeneratorConfig) -> usize {
        let n = config.blocks_per_side();
        n * (self.encoder_injection as usize + self.decoder_injection as usize)
    }
}

pub fn build_variant(config: &GeneratorConfig) -> Result<Wiring> {
    config.validate()?;
    let m = config.seed_channels;
    let none = Wiring {
        input_noise_channels: 0,
        input_noise_const: false,
        transition_noise_channels: 0,
        encoder_injection: false,
        decoder_injection: false,
    };
    Ok(match config.variant {
        Variant::CfgNin => Wiring { transition_noise_channels: m, decoder_injection: true, ..none },
        Variant::FullNin => {
            Wiring { transition_noise_channels: m, encoder_injection: true, decoder_injection: true, ..none }
        }
        Variant::Latent96c => Wiring { transition_noise_channels: m, ..none },
        Variant::Image3c => Wiring { input_noise_channels: config.image_channels, ..none },
        Variant::Image3cConst => {
            Wiring { input_noise_channels: config.image_channels, input_noise_const: true, ..none }
        }
        Variant::Image96c => Wiring { input_noise_channels: m, ..none },
    })
}

pub fn param_specs(config: &GeneratorConfig) -> Result<Vec<ParamSpec>> {
    let wiring = build_variant(config)?;
    let c = config.width;
    let cin = config.image_channels + config.control_channels + wiring.input_noise_channels;
    let mut specs = vec![ParamSpec::conv("intro.weight", c, cin, 3, 1.0), ParamSpec::vector("intro.bias", c, 0.0)];
    let n = config.blocks_per_side();
    for i in 0..n {
        specs.extend(block_specs(&format!("enc.{i}"), c, wiring.encoder_injection));
    }
    if wiring.transition_noise_channels > 0 {
        specs.push(ParamSpec::conv("transition.weight", c, c + wiring.transition_noise_channels, 1, 1.0));
        specs.push(ParamSpec::vector("transition.bias", c, 0.0));
    }
    for i in 0..n {
        specs.push(ParamSpec::conv(format!("dec.{i}.fuse.weight"), c, 2 * c, 1, 1.0));
        specs.push(ParamSpec::vector(format!("dec.{i}.fuse.bias"), c, 0.0));
        specs.extend(block_specs(&format!("dec.{i}"), c, wiring.decoder_injection));
    }
    // Small output init keeps the initial residual close to zero.
    specs.push(ParamSpec::conv("outro.weight", config.image_channels, c, 3, 0.1));
    specs.push(ParamSpec::vector("outro.bias", config.image_channels, 0.0));
    Ok(specs)
}

/// Number of trainable scalars.
pub fn param_count(config: &GeneratorConfig) -> Result<usize> {
    Ok(param_specs(config)?.iter().map(|s| s.shape.numel()).sum())
}

/// Every random input of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GenNoise<T> {
    /// Channels concatenated to the input, `[n, k, h, w]`.
    pub input: Option<Tensor<T>>,
    /// Channels concatenated at the transition, `[n, m, h, w]`.
    pub transition: Option<Tensor<T>>,
    /// One `[n, 1, h, w]` map per SNAF-NI block: encoder blocks first, then decoder.
    pub injections: Vec<Tensor<T>>,
}

/// Independent random streams derived from one master seed: stream 0 feeds
/// the concatenated Gaussian map, stream `1 + j` the `j`-th injection block.
#[derive(Clone, Debug)]
pub struct NoiseSeeds {
    pub master: u64,
    concat: ChaCha8Rng,
    injections: Vec<ChaCha8Rng>,
}

impl NoiseSeeds {
    pub fn new(master: u64, config: &GeneratorConfig) -> Result<Self> {
        let wiring = build_variant(config)?;
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(master);
            rng.set_stream(s);
            rng
        };
        Ok(NoiseSeeds {
            master,
            concat: stream(0),
            injections: (0..wiring.injection_blocks(config)).map(|j| stream(1 + j as u64)).collect(),
        })
    }

    /// Draws the noise for a batch of `n` samples at `h x w`, advancing every stream.
    pub fn sample<T: Scalar>(&mut self, config: &GeneratorConfig, n: usize, h: usize, w: usize) -> Result<GenNoise<T>> {
        let wiring = build_variant(config)?;
        let input = match wiring.input_noise_channels {
            0 => None,
            k if wiring.input_noise_const => {
                let vals = Tensor::<T>::randn(Shape::new(n, k, 1, 1), 1.0, &mut self.concat);
                let mut t = Tensor::zeros(Shape::new(n, k, h, w));
                for s in 0..n {
                    for c in 0..k {
                        let v = vals.data()[s * k + c];
                        t.plane_mut(s, c).fill(v);
                    }
                }
                Some(t)
            }
            k => Some(Tensor::randn(Shape::new(n, k, h, w), 1.0, &mut self.concat)),
        };
        let transition = match wiring.transition_noise_channels {
            0 => None,
            m => Some(Tensor::randn(Shape::new(n, m, h, w), 1.0, &mut self.concat)),
        };
        let injections =
            self.injections.iter_mut().map(|rng| Tensor::randn(Shape::new(n, 1, h, w), 1.0, rng)).collect();
        Ok(GenNoise { input, transition, injections })
    }
}

fn check_inputs<T: Scalar>(
    clean: &Var<T>,
    cm: &Var<T>,
    noise: &GenNoise<T>,
    config: &GeneratorConfig,
    wiring: &Wiring,
) -> Result<()> {
    let s = clean.shape();
    if s.c != config.image_channels {
        return Err(Error::Shape(format!("expected {} image channels, got {}", config.image_channels, s.c)));
    }
    let cs = cm.shape();
    if cs != s.with_c(config.control_channels) {
        return Err(Error::Shape(format!("control map {cs} does not match image {s}")));
    }
    let expect = |t: &Option<Tensor<T>>, k: usize, what: &str| -> Result<()> {
        match (t, k) {
            (None, 0) => Ok(()),
            (Some(t), k) if k > 0 && t.shape() == s.with_c(k) => Ok(()),
            _ => Err(Error::Shape(format!("{what} noise does not match the variant wiring"))),
        }
    };
    expect(&noise.input, wiring.input_noise_channels, "input")?;
    expect(&noise.transition, wiring.transition_noise_channels, "transition")?;
    if noise.injections.len() != wiring.injection_blocks(config) {
        return Err(Error::Shape(format!(
            "{} injection maps for {} injection blocks",
            noise.injections.len(),
            wiring.injection_blocks(config)
        )));
    }
    Ok(())
}

/// Encoder features after each block, given the network input.
pub fn encode<T: Scalar>(
    clean: &Var<T>,
    cm: &Var<T>,
    noise: &GenNoise<T>,
    p: &ParamVars<T>,
    config: &GeneratorConfig,
) -> Result<Vec<Var<T>>> {
    let wiring = build_variant(config)?;
    check_inputs(clean, cm, noise, config, &wiring)?;
    let input = match &noise.input {
        Some(t) => Var::concat_channels(&[clean, cm, &Var::constant(t.clone())]),
        None => Var::concat_channels(&[clean, cm]),
    };
    let mut h = input.conv2d(p.get("intro.weight"), Some(p.get("intro.bias")), PadMode::Reflect);
    let mut feats = Vec::with_capacity(config.blocks_per_side());
    for i in 0..config.blocks_per_side() {
        let prefix = format!("enc.{i}");
        h = if wiring.encoder_injection {
            snaf_ni_forward(&h, p, &prefix, &noise.injections[i])?
        } else {
            snaf_forward(&h, p, &prefix)?
        };
        feats.push(h.clone());
    }
    Ok(feats)
}

/// Predicts a noise map (in unit-range image units) for a clean image in
/// `[0, 1]` and its control map.
pub fn generator_forward<T: Scalar>(
    clean: &Var<T>,
    cm: &Var<T>,
    noise: &GenNoise<T>,
    p: &ParamVars<T>,
    config: &GeneratorConfig,
) -> Result<Var<T>> {
    let wiring = build_variant(config)?;
    let feats = encode(clean, cm, noise, p, config)?;
    let mut h = feats.last().expect("at least one block").clone();
    if let Some(z) = &noise.transition {
        h = Var::concat_channels(&[&h, &Var::constant(z.clone())]).conv2d(
            p.get("transition.weight"),
            Some(p.get("transition.bias")),
            PadMode::Reflect,
        );
    }
    let n = config.blocks_per_side();
    let offset = if wiring.encoder_injection { n } else { 0 };
    for i in 0..n {
        let prefix = format!("dec.{i}");
        let skip = &feats[n - 1 - i];
        h = Var::concat_channels(&[&h, skip]).conv2d(
            p.get(&format!("{prefix}.fuse.weight")),
            Some(p.get(&format!("{prefix}.fuse.bias"))),
            PadMode::Reflect,
        );
        h = if wiring.decoder_injection {
            snaf_ni_forward(&h, p, &prefix, &noise.injections[offset + i])?
        } else {
            snaf_forward(&h, p, &prefix)?
        };
    }
    Ok(h.conv2d(p.get("outro.weight"), Some(p.get("outro.bias")), PadMode::Reflect))
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore<f32>,
}

impl Generator {
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        let specs = param_specs(&config)?;
        let params = ParamStore::init(&specs, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Generator { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Forward pass without gradient tracking. `clean` is `[n, c, h, w]` in `[0, 1]`.
    pub fn predict(&self, clean: &Tensor<f32>, cm: &Tensor<f32>, noise: &GenNoise<f32>) -> Result<Tensor<f32>> {
        let p = self.params.vars(false);
        let out = generator_forward(&Var::constant(clean.clone()), &Var::constant(cm.clone()), noise, &p, &self.config)?;
        Ok(out.value().clone())
    }

    /// Draws fresh noise from `seeds` and predicts.
    pub fn sample(&self, clean: &Tensor<f32>, cm: &Tensor<f32>, seeds: &mut NoiseSeeds) -> Result<Tensor<f32>> {
        let s = clean.shape();
        let noise = seeds.sample(&self.config, s.n, s.h, s.w)?;
        self.predict(clean, cm, &noise)
    }

    /// Writes config and parameters under `prefix` (e.g. `gen/`).
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
            .ok_or_else(|| Error::Format("archive holds no generator config".into()))?;
        let config: GeneratorConfig = serde_json::from_value(cfg.clone())?;
        let specs = param_specs(&config)?;
        let mut params = ParamStore::default();
        for spec in &specs {
            let t = archive
                .arrays
                .get(&format!("{prefix}{}", spec.name))
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks {}", spec.name)))?;
            params.insert(spec.name.clone(), t.clone())?;
        }
        params.validate(&specs)?;
        Ok(Generator { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut a = Archive::new(serde_json::json!({}));
        self.write_into(&mut a, "gen/")?;
        a.save(path)
    }

    /// Loads a generator from a standalone file or a training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        Generator::read_from(&Archive::load(path)?, "gen/")
    }
}
