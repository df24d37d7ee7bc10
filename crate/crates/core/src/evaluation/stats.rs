use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{build_control_map, ControlDescriptor, ControlNormalization, EvalMode, Image};
use crate::error::{Error, Result};
use crate::generator::{GenNoise, Generator, NoiseSeeds};
use crate::noise_models::{hetero_sample, HeteroGaussianParams};
use crate::tensor::Tensor;
use crate::training::derive_seed;

/// Largest per-channel clean standard deviation (unit range) of a flat patch.
pub const FLATNESS_STD: f64 = 2.0 / 255.0;

/// Something that draws noise maps for a clean image in `[0, 1]`. Returned
/// maps are in unit residual units, one per seed.
pub trait NoiseSampler {
    fn sample_noise(&self, clean: &Image, descriptor: &ControlDescriptor, seeds: &[u64]) -> Result<Vec<Image>>;
}

/// Draws from a trained generator, batching several seeds per forward pass.
pub struct GeneratorSampler<'a> {
    pub gen: &'a Generator,
    pub mode: EvalMode,
    pub norm: ControlNormalization,
    pub batch: usize,
}

impl NoiseSampler for GeneratorSampler<'_> {
    fn sample_noise(&self, clean: &Image, descriptor: &ControlDescriptor, seeds: &[u64]) -> Result<Vec<Image>> {
        let cfg = &self.gen.config;
        let (h, w) = (clean.height, clean.width);
        let cm = build_control_map(descriptor, h, w, self.mode, &self.norm)?.planes.to_tensor();
        let x = clean.to_tensor();
        let mut out = Vec::with_capacity(seeds.len());
        for chunk in seeds.chunks(self.batch.max(1)) {
            let draws: Vec<GenNoise<f32>> = chunk
                .iter()
                .map(|&s| NoiseSeeds::new(s, cfg)?.sample::<f32>(cfg, 1, h, w))
                .collect::<Result<_>>()?;
            let noise = stack_noise(&draws)?;
            let reps = chunk.len();
            let xs = Tensor::stack(&vec![&x; reps])?;
            let cms = Tensor::stack(&vec![&cm; reps])?;
            let y = self.gen.predict(&xs, &cms, &noise)?;
            out.extend((0..reps).map(|i| Image::from_tensor(&y, i)));
        }
        Ok(out)
    }
}

fn stack_noise(draws: &[GenNoise<f32>]) -> Result<GenNoise<f32>> {
    let opt = |f: &dyn Fn(&GenNoise<f32>) -> Option<&Tensor<f32>>| -> Result<Option<Tensor<f32>>> {
        let parts: Option<Vec<&Tensor<f32>>> = draws.iter().map(f).collect();
        parts.map(|p| Tensor::stack(&p)).transpose()
    };
    let injections = (0..draws[0].injections.len())
        .map(|j| Tensor::stack(&draws.iter().map(|d| &d.injections[j]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    Ok(GenNoise { input: opt(&|d| d.input.as_ref())?, transition: opt(&|d| d.transition.as_ref())?, injections })
}

/// Draws from the heteroscedastic model, keyed by ISO.
pub struct OracleSampler {
    pub params: BTreeMap<u32, HeteroGaussianParams>,
}

impl NoiseSampler for OracleSampler {
    fn sample_noise(&self, clean: &Image, descriptor: &ControlDescriptor, seeds: &[u64]) -> Result<Vec<Image>> {
        let p = self
            .params
            .get(&descriptor.iso)
            .ok_or_else(|| Error::Config(format!("no oracle parameters for ISO {}", descriptor.iso)))?;
        seeds.iter().map(|&s| hetero_sample(clean, p, &mut ChaCha8Rng::seed_from_u64(s))).collect()
    }
}

/// Repeated-draw statistics at fixed pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalStats {
    /// Pooled values per channel (synthetic path: the centre pixel of every draw).
    pub values: Vec<Vec<f64>>,
    /// Standard deviation of `values`, per channel.
    pub std: Vec<f64>,
    /// Per-pixel standard deviation across draws.
    pub std_map: Image,
}

fn check_flat(clean: &Image) -> Result<()> {
    for c in 0..clean.channels {
        let p = clean.plane(c);
        let n = p.len() as f64;
        let mean = p.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std > FLATNESS_STD {
            return Err(Error::Flatness(format!("channel {c} std {std:.5} exceeds {FLATNESS_STD:.5}")));
        }
    }
    Ok(())
}

fn std_of(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Running per-pixel moments over a sequence of equally shaped maps.
struct PixelMoments {
    n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
    shape: (usize, usize, usize),
}

impl PixelMoments {
    fn new(like: &Image) -> Self {
        PixelMoments {
            n: 0.0,
            sum: vec![0.0; like.data.len()],
            sq: vec![0.0; like.data.len()],
            shape: (like.channels, like.height, like.width),
        }
    }

    fn push(&mut self, m: &Image) {
        self.n += 1.0;
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sq).zip(&m.data) {
            *s += v as f64;
            *q += (v as f64) * (v as f64);
        }
    }

    fn std_map(&self) -> Image {
        let data = self
            .sum
            .iter()
            .zip(&self.sq)
            .map(|(&s, &q)| {
                let mean = s / self.n;
                ((q / self.n - mean * mean).max(0.0)).sqrt() as f32
            })
            .collect();
        Image { channels: self.shape.0, height: self.shape.1, width: self.shape.2, data }
    }
}

/// Draws `n_samples` noise maps for a flat patch with seeds derived from
/// `master_seed` and records the centre pixel of each draw.
pub fn temporal_variance(
    sampler: &dyn NoiseSampler,
    flat_patch: &Image,
    descriptor: &ControlDescriptor,
    n_samples: usize,
    master_seed: u64,
) -> Result<TemporalStats> {
    check_flat(flat_patch)?;
    if n_samples == 0 {
        return Err(Error::InsufficientData("temporal variance needs at least one draw".into()));
    }
    let (cy, cx) = (flat_patch.height / 2, flat_patch.width / 2);
    let mut values = vec![Vec::with_capacity(n_samples); flat_patch.channels];
    let mut moments = PixelMoments::new(flat_patch);
    let seeds: Vec<u64> = (0..n_samples as u64).map(|i| derive_seed(master_seed, i, 77)).collect();
    for chunk in seeds.chunks(256) {
        for m in sampler.sample_noise(flat_patch, descriptor, chunk)? {
            moments.push(&m);
            for (c, v) in values.iter_mut().enumerate() {
                v.push(m.get(c, cy, cx) as f64);
            }
        }
    }
    let std = values.iter().map(|v| std_of(v)).collect();
    Ok(TemporalStats { values, std, std_map: moments.std_map() })
}

/// Pools residuals of several noisy realizations of one flat clean patch over
/// a `stride` pixel grid.
pub fn temporal_variance_real(clean: &Image, realizations: &[Image], stride: usize) -> Result<TemporalStats> {
    check_flat(clean)?;
    if realizations.is_empty() || stride == 0 {
        return Err(Error::InsufficientData("need at least one realization and a positive stride".into()));
    }
    let mut values = vec![Vec::new(); clean.channels];
    let mut moments = PixelMoments::new(clean);
    for noisy in realizations {
        if !noisy.same_shape(clean) {
            return Err(Error::Shape("realization shape differs from the clean patch".into()));
        }
        let residual = Image {
            data: noisy.data.iter().zip(&clean.data).map(|(&n, &c)| n - c).collect(),
            ..clean.clone()
        };
        moments.push(&residual);
        for (c, v) in values.iter_mut().enumerate() {
            for y in (0..clean.height).step_by(stride) {
                for x in (0..clean.width).step_by(stride) {
                    v.push(residual.get(c, y, x) as f64);
                }
            }
        }
    }
    let std = values.iter().map(|v| std_of(v)).collect();
    Ok(TemporalStats { values, std, std_map: moments.std_map() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    pub offset: (i32, i32),
    /// Pearson correlation per channel.
    pub per_channel: Vec<f64>,
    /// Pixel pairs per channel.
    pub pairs: usize,
}

/// Pearson correlation between values at `p` and `p + offset` (dy, dx),
/// pooled over all maps, per channel.
pub fn spatial_correlation(maps: &[Image], offsets: &[(i32, i32)]) -> Result<Vec<CorrelationRow>> {
    let channels = maps.first().map(|m| m.channels).ok_or_else(|| Error::InsufficientData("no maps".into()))?;
    let mut rows = Vec::with_capacity(offsets.len());
    for &(dy, dx) in offsets {
        let mut acc = vec![[0f64; 5]; channels];
        let mut pairs = 0usize;
        for m in maps {
            if m.channels != channels {
                return Err(Error::Shape("maps disagree on channel count".into()));
            }
            let (h, w) = (m.height as i32, m.width as i32);
            let ys = (0.max(-dy))..(h.min(h - dy));
            let xs = (0.max(-dx))..(w.min(w - dx));
            if ys.is_empty() || xs.is_empty() {
                continue;
            }
            pairs += ys.len() * xs.len();
            for (c, a) in acc.iter_mut().enumerate() {
                let p = m.plane(c);
                for y in ys.clone() {
                    for x in xs.clone() {
                        let u = p[(y * w + x) as usize] as f64;
                        let v = p[((y + dy) * w + x + dx) as usize] as f64;
                        a[0] += u;
                        a[1] += v;
                        a[2] += u * u;
                        a[3] += v * v;
                        a[4] += u * v;
                    }
                }
            }
        }
        if pairs < 1000 {
            return Err(Error::InsufficientData(format!("{pairs} pixel pairs at offset ({dy},{dx}); need 1000")));
        }
        let n = pairs as f64;
        let per_channel = acc
            .iter()
            .map(|a| {
                let cov = a[4] / n - (a[0] / n) * (a[1] / n);
                let vu = a[2] / n - (a[0] / n).powi(2);
                let vv = a[3] / n - (a[1] / n).powi(2);
                cov / (vu * vv).sqrt()
            })
            .collect();
        rows.push(CorrelationRow { offset: (dy, dx), per_channel, pairs });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveBin {
    pub lo: f64,
    pub hi: f64,
    /// Residual variance per channel; `None` where fewer than 100 samples fell.
    pub variance: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl CurveBin {
    pub fn center(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceCurve {
    pub bins: Vec<CurveBin>,
}

/// Minimum samples for a bin to be reported.
const MIN_BIN_SAMPLES: usize = 100;

/// Residual variance per clean-intensity bin over `[0, 1]`, per channel.
/// `pairs` holds (clean in `[0, 1]`, residual) in matching units.
pub fn variance_vs_intensity(pairs: &[(Image, Image)], bins: usize) -> Result<VarianceCurve> {
    if bins == 0 {
        return Err(Error::Config("need at least one intensity bin".into()));
    }
    let channels = pairs.first().map(|p| p.0.channels).unwrap_or(0);
    let mut acc = vec![vec![(0usize, 0f64, 0f64); channels]; bins];
    for (clean, noise) in pairs {
        if !clean.same_shape(noise) || clean.channels != channels {
            return Err(Error::Shape("clean and residual maps disagree in shape".into()));
        }
        for c in 0..channels {
            for (&i, &n) in clean.plane(c).iter().zip(noise.plane(c)) {
                let b = ((i as f64 * bins as f64).floor().max(0.0) as usize).min(bins - 1);
                let a = &mut acc[b][c];
                a.0 += 1;
                a.1 += n as f64;
                a.2 += (n as f64) * (n as f64);
            }
        }
    }
    let w = 1.0 / bins as f64;
    let bins = acc
        .iter()
        .enumerate()
        .map(|(b, per)| CurveBin {
            lo: b as f64 * w,
            hi: (b + 1) as f64 * w,
            variance: per
                .iter()
                .map(|&(n, s, q)| {
                    (n >= MIN_BIN_SAMPLES).then(|| {
                        let mean = s / n as f64;
                        q / n as f64 - mean * mean
                    })
                })
                .collect(),
            counts: per.iter().map(|a| a.0).collect(),
        })
        .collect();
    Ok(VarianceCurve { bins })
}

/// `intensity,variance_<ch>...` rows; absent bins are left empty.
pub fn curve_csv(curve: &VarianceCurve, channel_names: &[&str]) -> String {
    let mut s = String::from("intensity");
    for n in channel_names {
        s.push_str(&format!(",variance_{n}"));
    }
    s.push('\n');
    for b in &curve.bins {
        if b.variance.iter().all(Option::is_none) {
            continue;
        }
        s.push_str(&format!("{}", b.center()));
        for v in &b.variance {
            match v {
                Some(v) => s.push_str(&format!(",{v}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}
