//! Parametric noise models and the synthetic ground-truth oracle.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColorSpace, ControlDescriptor, Image, ImagePair};
use crate::error::{Error, Result};

/// `n ~ N(0, a·I + σ_ind²)` with `I` the clean intensity in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroGaussianParams {
    /// `a` in `σ_dep²(I) = a·I`.
    pub sigma_dep_gain: f64,
    /// `σ_ind²`.
    pub sigma_ind_sq: f64,
}

impl HeteroGaussianParams {
    pub fn new(sigma_dep_gain: f64, sigma_ind_sq: f64) -> Result<Self> {
        let p = HeteroGaussianParams { sigma_dep_gain, sigma_ind_sq };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_dep_gain >= 0.0 && self.sigma_ind_sq >= 0.0) {
            return Err(Error::Param(format!(
                "noise parameters must be nonnegative, got a={} and sigma_ind^2={}",
                self.sigma_dep_gain, self.sigma_ind_sq
            )));
        }
        Ok(())
    }

    pub fn variance(&self, intensity: f64) -> f64 {
        self.sigma_dep_gain * intensity + self.sigma_ind_sq
    }

    pub fn std(&self, intensity: f64) -> f64 {
        self.variance(intensity).sqrt()
    }
}

/// I.i.d. `N(0, sigma²)` samples in a `channels x height x width` image.
pub fn awgn_sample<R: Rng + ?Sized>(dims: [usize; 3], sigma: f64, rng: &mut R) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(Error::Param(format!("sigma must be nonnegative, got {sigma}")));
    }
    let [c, h, w] = dims;
    let data = (0..c * h * w)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (sigma * z) as f32
        })
        .collect();
    Image::new(c, h, w, data)
}

/// Signal-dependent Gaussian noise for a clean image with values in `[0, 1]`.
pub fn hetero_sample<R: Rng + ?Sized>(clean: &Image, params: &HeteroGaussianParams, rng: &mut R) -> Result<Image> {
    params.validate()?;
    if let Some(v) = clean.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("clean intensity {v} outside [0, 1]")));
    }
    let data = clean
        .data
        .iter()
        .map(|&i| {
            let z: f64 = StandardNormal.sample(rng);
            (params.std(i as f64) * z) as f32
        })
        .collect();
    Image::new(clean.channels, clean.height, clean.width, data)
}

/// Pairs every clean image with every descriptor. Clean images are in
/// `[0, 1]`; for sRGB they are quantized to integers first and the noisy
/// image is rounded and clipped to `[0, 255]`.
pub fn synth_oracle_dataset<R: Rng + ?Sized>(
    clean_images: &[Image],
    descriptors: &[ControlDescriptor],
    iso_to_params: &BTreeMap<u32, HeteroGaussianParams>,
    space: ColorSpace,
    rng: &mut R,
) -> Result<Vec<ImagePair>> {
    for d in descriptors {
        if !iso_to_params.contains_key(&d.iso) {
            return Err(Error::Config(format!("no oracle noise parameters for ISO {}", d.iso)));
        }
    }
    let mut out = Vec::with_capacity(clean_images.len() * descriptors.len());
    for clean in clean_images {
        if clean.channels != space.channels() {
            return Err(Error::Shape(format!(
                "{space:?} oracle needs {} channels, got {}",
                space.channels(),
                clean.channels
            )));
        }
        let clean = match space {
            ColorSpace::Srgb => clean.map(|v| (v * 255.0).round().clamp(0.0, 255.0)),
            ColorSpace::Raw => clean.clone(),
        };
        let unit = clean.map(|v| v / space.scale());
        for d in descriptors {
            let noise = hetero_sample(&unit, &iso_to_params[&d.iso], rng)?;
            let noisy = match space {
                ColorSpace::Srgb => Image {
                    data: unit
                        .data
                        .iter()
                        .zip(&noise.data)
                        .map(|(&c, &n)| (255.0 * (c + n)).round().clamp(0.0, 255.0))
                        .collect(),
                    ..unit.clone()
                },
                ColorSpace::Raw => Image {
                    data: unit.data.iter().zip(&noise.data).map(|(&c, &n)| c + n).collect(),
                    ..unit.clone()
                },
            };
            out.push(ImagePair::new(clean.clone(), noisy, space, d.clone())?);
        }
    }
    Ok(out)
}

/// Deterministic textured test image with values in `[lo, hi]`: flat
/// rectangles over smooth gradients and a few oriented sinusoids.
pub fn procedural_clean(channels: usize, height: usize, width: usize, lo: f32, hi: f32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::zeros(channels, height, width);
    let (hf, wf) = (height.max(1) as f32, width.max(1) as f32);
    let gx: f32 = rng.random_range(-1.0..1.0);
    let gy: f32 = rng.random_range(-1.0..1.0);
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let freq: f32 = rng.random_range(0.05..0.4);
            let amp: f32 = rng.random_range(0.05..0.2);
            let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            (theta.cos() * freq, theta.sin() * freq, amp, phase)
        })
        .collect();
    let tint: Vec<f32> = (0..channels).map(|_| rng.random_range(-0.1..0.1)).collect();
    for y in 0..height {
        for x in 0..width {
            let mut v = 0.5 + 0.25 * (gx * (x as f32 / wf - 0.5) + gy * (y as f32 / hf - 0.5));
            for &(fx, fy, amp, phase) in &waves {
                v += amp * (fx * x as f32 + fy * y as f32 + phase).sin() * 0.5;
            }
            for (c, t) in tint.iter().enumerate() {
                img.set(c, y, x, v + t);
            }
        }
    }
    let rects = 2 + (height * width / 1024).min(6);
    for _ in 0..rects {
        let rh = rng.random_range(height / 8..=height / 3).max(1);
        let rw = rng.random_range(width / 8..=width / 3).max(1);
        let y0 = rng.random_range(0..=height - rh.min(height));
        let x0 = rng.random_range(0..=width - rw.min(width));
        let level: f32 = rng.random_range(0.0..1.0);
        for c in 0..channels {
            let t = tint[c] * 0.5;
            for y in y0..(y0 + rh).min(height) {
                for x in x0..(x0 + rw).min(width) {
                    img.set(c, y, x, level + t);
                }
            }
        }
    }
    // Map the raw field to [lo, hi].
    let (mn, mx) = img.data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (mx - mn).max(1e-6);
    img.map(|v| lo + (hi - lo) * (v - mn) / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_residual, Brandmark};

    #[test]
    fn awgn_zero_sigma_and_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(awgn_sample([1, 4, 4], 0.0, &mut rng).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(matches!(awgn_sample([1, 4, 4], -1.0, &mut rng), Err(Error::Param(_))));
    }

    #[test]
    fn awgn_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = awgn_sample([1, 1000, 1000], 0.1, &mut rng).unwrap();
        let mean = n.data.iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        let var = n.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 1e6;
        assert!(mean.abs() <= 5e-4, "{mean}");
        assert!((0.0995..=0.1005).contains(&var.sqrt()), "{}", var.sqrt());
    }

    #[test]
    fn hetero_rejects_out_of_range() {
        let p = HeteroGaussianParams::new(0.01, 0.0004).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(hetero_sample(&Image::filled(1, 2, 2, 1.5), &p, &mut rng), Err(Error::Domain(_))));
        assert!(HeteroGaussianParams::new(-0.1, 0.0).is_err());
    }

    #[test]
    fn oracle_cardinality_and_determinism() {
        let clean: Vec<Image> = (0..10).map(|s| procedural_clean(3, 16, 16, 0.2, 0.8, s)).collect();
        let descs = [ControlDescriptor::new(Brandmark::S6, 100), ControlDescriptor::new(Brandmark::S6, 800)];
        let mut params = BTreeMap::new();
        params.insert(100, HeteroGaussianParams::new(0.002, 0.0001).unwrap());
        params.insert(800, HeteroGaussianParams::new(0.006, 0.0004).unwrap());
        let run = |seed| {
            synth_oracle_dataset(&clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
        };
        let a = run(5);
        assert_eq!(a.len(), 20);
        assert_eq!(a, run(5));
        for p in &a {
            assert!(p.noisy.data.iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        }
        params.remove(&800);
        let err = synth_oracle_dataset(&clean, &descs, &params, ColorSpace::Srgb, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn oracle_residual_is_zero_mean() {
        let clean = vec![procedural_clean(4, 64, 64, 0.2, 0.8, 3)];
        let descs = [ControlDescriptor::new(Brandmark::IP, 400)];
        let p = HeteroGaussianParams::new(0.004, 0.0002).unwrap();
        let params = BTreeMap::from([(400, p)]);
        let pairs =
            synth_oracle_dataset(&clean, &descs, &params, ColorSpace::Raw, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let r = compute_residual(&pairs[0]).unwrap();
        let n = r.data.len() as f64;
        let mean = r.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let sigma = p.std(0.8);
        assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "{mean}");
    }

    #[test]
    fn procedural_stays_in_range() {
        let img = procedural_clean(3, 40, 56, 0.2, 0.8, 11);
        assert!(img.data.iter().all(|v| (0.2 - 1e-6..=0.8 + 1e-6).contains(v)));
        assert_eq!(img, procedural_clean(3, 40, 56, 0.2, 0.8, 11));
    }
}
