//! Least-squares GAN losses and the Gram-matrix style loss.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::Archive;
use crate::autograd::Var;
use crate::data::ColorSpace;
use crate::error::{Error, Result};
use crate::kernels::PadMode;
use crate::params::{ParamSpec, ParamStore, ParamVars};
use crate::tensor::Scalar;

fn check_finite<T: Scalar>(v: &Var<T>, what: &str) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::numerics(format!("non-finite {what}")))
    }
}

/// `[(1 - D(real))² + D(fake)²] / 2`, averaged over the batch.
pub fn disc_loss<T: Scalar>(score_real: &Var<T>, score_fake: &Var<T>) -> Result<Var<T>> {
    check_finite(score_real, "real score")?;
    check_finite(score_fake, "fake score")?;
    let real = score_real.scale(-1.0).add_const(1.0).square().mean();
    let fake = score_fake.square().mean();
    Ok(real.add(&fake).scale(0.5))
}

/// `(1 - D(fake))²`, averaged over the batch.
pub fn adv_loss<T: Scalar>(score_fake: &Var<T>) -> Result<Var<T>> {
    check_finite(score_fake, "fake score")?;
    Ok(score_fake.scale(-1.0).add_const(1.0).square().mean())
}

/// Per-sample `F Fᵀ / (C H W)` with `F` the `C x HW` flattening.
pub fn gram<T: Scalar>(features: &Var<T>) -> Var<T> {
    features.gram()
}

/// Balancing weight of the style term: 0.5 in sRGB, 1.0 in raw.
pub fn style_weight(space: ColorSpace) -> f64 {
    match space {
        ColorSpace::Srgb => 0.5,
        ColorSpace::Raw => 1.0,
    }
}

/// `adv + λ·style`.
pub fn total_gen_loss<T: Scalar>(adv: &Var<T>, style: &Var<T>, space: ColorSpace) -> Var<T> {
    adv.add(&style.scale(style_weight(space)))
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Convolutions of the 16-layer recognition network up to `conv5_1`, as
/// `(name, full width)`; `None` marks a 2x2 max pool.
const LAYERS: [Option<(&str, usize)>; 14] = [
    Some(("conv1_1", 64)),
    Some(("conv1_2", 64)),
    None,
    Some(("conv2_1", 128)),
    Some(("conv2_2", 128)),
    None,
    Some(("conv3_1", 256)),
    Some(("conv3_2", 256)),
    Some(("conv3_3", 256)),
    None,
    Some(("conv4_1", 512)),
    Some(("conv4_2", 512)),
    Some(("conv4_3", 512)),
    None,
];
const TAPS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];

/// Where the extractor weights come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSource {
    /// Fixed-seed random weights with every width divided by `width_divisor`.
    TestRandom { seed: u64, width_divisor: usize },
    /// Weights file in the archive format, arrays named `conv1_1.weight` etc.
    Pretrained { path: std::path::PathBuf },
}

impl Default for ExtractorSource {
    fn default() -> Self {
        ExtractorSource::TestRandom { seed: 0, width_divisor: 8 }
    }
}

/// Frozen feature pyramid with five tap points.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor {
    params: ParamStore<f64>,
    /// `"test-random"` or `"sha256:<hex>"` of the weights file.
    pub provenance: String,
}

fn layer_specs(divisor: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut cin = 3;
    let all = LAYERS.iter().flatten().copied().chain([("conv5_1", 512)]);
    for (name, width) in all {
        let cout = (width / divisor).max(1);
        specs.push(ParamSpec::conv(format!("{name}.weight"), cout, cin, 3, 2f64.sqrt()));
        specs.push(ParamSpec::vector(format!("{name}.bias"), cout, 0.0));
        cin = cout;
    }
    specs
}

impl PerceptualExtractor {
    pub fn test_random(seed: u64, width_divisor: usize) -> Result<Self> {
        if width_divisor == 0 {
            return Err(Error::Config("extractor width divisor must be positive".into()));
        }
        let params = ParamStore::init(&layer_specs(width_divisor), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(PerceptualExtractor { params, provenance: "test-random".into() })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
        let hash: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let archive = Archive::read_from(bytes.as_slice())?;
        let specs = layer_specs(1);
        let mut params = ParamStore::default();
        for spec in &specs {
            let t = archive
                .arrays
                .get(&spec.name)
                .ok_or_else(|| Error::Format(format!("weights file lacks {}", spec.name)))?;
            // Biases may be stored flat; only the element count matters.
            let t = if t.len() == spec.shape.numel() { t.clone().reshape(spec.shape)? } else { t.clone() };
            params.insert(spec.name.clone(), t.cast())?;
        }
        params.validate(&specs)?;
        Ok(PerceptualExtractor { params, provenance: format!("sha256:{hash}") })
    }

    pub fn from_source(source: &ExtractorSource) -> Result<Self> {
        match source {
            ExtractorSource::TestRandom { seed, width_divisor } => Self::test_random(*seed, *width_divisor),
            ExtractorSource::Pretrained { path } => Self::from_file(path),
        }
    }

    /// Features at the five taps for a 3-channel noise map in residual units.
    pub fn features<T: Scalar>(&self, noise: &Var<T>, params: &ParamVars<T>) -> Result<Vec<Var<T>>> {
        if noise.shape().c != 3 {
            return Err(Error::Shape(format!("extractor takes 3 channels, got {}", noise.shape().c)));
        }
        // n/2 + 0.5, then the standard per-channel normalization.
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 0.5 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN.iter().zip(IMAGENET_STD).map(|(m, s)| (0.5 - m) / s).collect();
        let mut h = noise.channel_affine(&scale, &shift);
        let mut taps = Vec::with_capacity(5);
        let conv = |h: &Var<T>, name: &str| {
            h.conv2d(params.get(&format!("{name}.weight")), Some(params.get(&format!("{name}.bias"))), PadMode::Zero)
                .relu()
        };
        for layer in LAYERS.iter() {
            match layer {
                Some((name, _)) => {
                    h = conv(&h, name);
                    if TAPS.contains(name) {
                        taps.push(h.clone());
                    }
                }
                None => h = h.max_pool2(),
            }
        }
        taps.push(conv(&h, "conv5_1"));
        Ok(taps)
    }

    /// Frozen graph leaves for the extractor weights in precision `T`.
    pub fn vars<T: Scalar>(&self) -> ParamVars<T> {
        self.params.cast::<T>().vars(false)
    }
}

/// Mean over the five taps of the MSE between Gram matrices.
pub fn style_loss<T: Scalar>(
    real_noise: &Var<T>,
    fake_noise: &Var<T>,
    extractor: &PerceptualExtractor,
    weights: &ParamVars<T>,
) -> Result<Var<T>> {
    if real_noise.shape() != fake_noise.shape() {
        return Err(Error::Shape(format!("style inputs {} and {} differ", real_noise.shape(), fake_noise.shape())));
    }
    let s = real_noise.shape();
    if s.h < 16 || s.w < 16 {
        return Err(Error::Shape(format!("style loss needs at least 16x16 inputs, got {}x{}", s.h, s.w)));
    }
    let fr = extractor.features(real_noise, weights)?;
    let ff = extractor.features(fake_noise, weights)?;
    let mut total: Option<Var<T>> = None;
    for (a, b) in fr.iter().zip(&ff) {
        let term = gram(b).mse(&gram(a));
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("five taps").scale(1.0 / TAPS.len() as f64))
}

/// Raw variant: the (R, G1, B) and (R, G2, B) losses averaged.
pub fn style_loss_raw<T: Scalar>(
    real4: &Var<T>,
    fake4: &Var<T>,
    extractor: &PerceptualExtractor,
    weights: &ParamVars<T>,
) -> Result<Var<T>> {
    if real4.shape().c != 4 || fake4.shape().c != 4 {
        return Err(Error::Shape("raw style loss takes 4-channel maps".into()));
    }
    let mut sum: Option<Var<T>> = None;
    for idx in [[0, 1, 3], [0, 2, 3]] {
        let term = style_loss(&real4.select_channels(&idx), &fake4.select_channels(&idx), extractor, weights)?;
        sum = Some(match sum {
            Some(s) => s.add(&term),
            None => term,
        });
    }
    Ok(sum.expect("two terms").scale(0.5))
}

/// Dispatches on the colour space.
pub fn style_loss_for<T: Scalar>(
    real: &Var<T>,
    fake: &Var<T>,
    space: ColorSpace,
    extractor: &PerceptualExtractor,
    weights: &ParamVars<T>,
) -> Result<Var<T>> {
    match space {
        ColorSpace::Srgb => style_loss(real, fake, extractor, weights),
        ColorSpace::Raw => style_loss_raw(real, fake, extractor, weights),
    }
}

/// Writes extractor-shaped weights (e.g. converted pretrained ones) to `path`.
pub fn save_extractor_weights(params: &ParamStore<f32>, path: &Path) -> Result<()> {
    params.validate(&layer_specs(1))?;
    let mut a = Archive::new(serde_json::json!({"kind": "extractor"}));
    for (name, t) in params.iter() {
        a.insert(name.clone(), t);
    }
    a.save(path)
}

/// Full-width parameter layout expected in a weights file.
pub fn extractor_specs() -> Vec<ParamSpec> {
    layer_specs(1)
}
