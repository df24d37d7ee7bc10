//! Full-image synthesis with overlapping generator tiles.
//!
//! Tiles step by `tile - overlap` and the last row/column is shifted inward
//! to end at the image border. Noise from neighbouring tiles is merged with
//! per-axis weights that form a partition of unity. The default switches
//! from one tile to the next at the middle of their overlap with a short
//! crossfade, so the merged noise keeps the power of a single draw; the
//! linear mode ramps across the whole overlap instead.

use serde::{Deserialize, Serialize};

use crate::data::{build_control_map, ColorSpace, ControlDescriptor, ControlNormalization, EvalMode, Image};
use crate::error::{Error, Result};
use crate::generator::{Generator, NoiseSeeds};
use crate::training::derive_seed;

/// Purpose tag for per-tile seeds.
const PURPOSE_TILE: u64 = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    /// Hard switch at the overlap midline with a `crossfade`-pixel ramp.
    #[default]
    Midline,
    /// Linear ramp over the whole overlap.
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub height: usize,
    pub width: usize,
    pub tile_size: usize,
    pub overlap: usize,
    /// Tile row origins, increasing.
    pub rows: Vec<usize>,
    /// Tile column origins, increasing.
    pub cols: Vec<usize>,
    pub blend: BlendMode,
    /// Ramp width of [`BlendMode::Midline`] in pixels.
    pub crossfade: usize,
}

fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut p = 0;
    while p + tile < len {
        p = (p + stride).min(len - tile);
        out.push(p);
    }
    out
}

/// Tiles `height x width` with `tile`-sized squares overlapping by `overlap`.
pub fn plan_tiles(height: usize, width: usize, tile: usize, overlap: usize) -> Result<TilePlan> {
    if tile <= 2 * overlap {
        return Err(Error::Config(format!("tile size {tile} must exceed twice the overlap {overlap}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::Config("cannot tile an empty image".into()));
    }
    let stride = tile - overlap;
    Ok(TilePlan {
        height,
        width,
        tile_size: tile,
        overlap,
        rows: axis_origins(height, tile, stride),
        cols: axis_origins(width, tile, stride),
        blend: BlendMode::Midline,
        crossfade: 2,
    })
}

impl TilePlan {
    pub fn with_blend(mut self, blend: BlendMode) -> Self {
        self.blend = blend;
        self
    }

    /// Tile origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.rows.iter().flat_map(|&y| self.cols.iter().map(move |&x| (y, x))).collect()
    }

    pub fn num_tiles(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    /// Per-axis weights: `out[i][p]` is the weight of tile `i` at position
    /// `origins[i] + p`.
    fn axis_weights(&self, origins: &[usize], len: usize) -> Vec<Vec<f64>> {
        let tile = self.tile_size.min(len);
        let n = origins.len();
        // Ramp from tile i to tile i + 1 as a function of position.
        let ramp = |i: usize, y: f64| -> f64 {
            let (a, b) = (origins[i], origins[i + 1]);
            let ov = (a + tile - b) as f64;
            match self.blend {
                BlendMode::Linear => ((y - b as f64) / ov).clamp(0.0, 1.0),
                BlendMode::Midline => {
                    let m = (a + tile + b) as f64 / 2.0;
                    let cw = (self.crossfade as f64).min(ov);
                    if cw <= 0.0 {
                        f64::from(u8::from(y >= m))
                    } else {
                        ((y - (m - cw / 2.0)) / cw).clamp(0.0, 1.0)
                    }
                }
            }
        };
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..tile)
                    .map(|p| {
                        let y = (origins[i] + p) as f64 + 0.5;
                        let rise = if i > 0 { ramp(i - 1, y) } else { 1.0 };
                        let fall = if i + 1 < n { 1.0 - ramp(i, y) } else { 1.0 };
                        rise * fall
                    })
                    .collect()
            })
            .collect();
        let mut sum = vec![0.0; len];
        for (i, w) in raw.iter().enumerate() {
            for (p, v) in w.iter().enumerate() {
                sum[origins[i] + p] += v;
            }
        }
        raw.iter()
            .enumerate()
            .map(|(i, w)| w.iter().enumerate().map(|(p, v)| v / sum[origins[i] + p]).collect())
            .collect()
    }

    /// Blend weights per tile (row-major like [`TilePlan::origins`]), each a
    /// `th x tw` map where `th`/`tw` are the tile size capped by the image.
    pub fn blend_weights(&self) -> Vec<Vec<f32>> {
        let wy = self.axis_weights(&self.rows, self.height);
        let wx = self.axis_weights(&self.cols, self.width);
        let mut out = Vec::with_capacity(self.num_tiles());
        for ry in &wy {
            for cx in &wx {
                out.push(ry.iter().flat_map(|&a| cx.iter().map(move |&b| (a * b) as f32)).collect());
            }
        }
        out
    }

    /// Sum of all tile weights at every pixel (`height x width`).
    pub fn weight_sum(&self) -> Vec<f64> {
        let (th, tw) = (self.tile_size.min(self.height), self.tile_size.min(self.width));
        let mut sum = vec![0.0; self.height * self.width];
        for ((y0, x0), w) in self.origins().into_iter().zip(self.blend_weights()) {
            for y in 0..th {
                for x in 0..tw {
                    sum[(y0 + y) * self.width + x0 + x] += w[y * tw + x] as f64;
                }
            }
        }
        sum
    }

    /// Pixels covered by more than one tile.
    pub fn overlap_mask(&self) -> Vec<bool> {
        let (th, tw) = (self.tile_size.min(self.height), self.tile_size.min(self.width));
        let mut count = vec![0u32; self.height * self.width];
        for (y0, x0) in self.origins() {
            for y in y0..y0 + th {
                for x in x0..x0 + tw {
                    count[y * self.width + x] += 1;
                }
            }
        }
        count.into_iter().map(|c| c > 1).collect()
    }
}

/// How synthesized noise is conditioned and written back.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub space: ColorSpace,
    pub mode: EvalMode,
    pub norm: ControlNormalization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    /// Clean plus noise, in the clean image's units (sRGB rounded and clipped).
    pub noisy: Image,
    /// Blended noise in unit residual units, before rounding.
    pub noise: Image,
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn pad_reflect(img: &Image, h: usize, w: usize) -> Image {
    let mut out = Image::zeros(img.channels, h, w);
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..w {
                out.set(c, y, x, img.get(c, mirror(y as isize, img.height), mirror(x as isize, img.width)));
            }
        }
    }
    out
}

/// Adds tiled generator noise to `clean` (sRGB in `[0, 255]`, raw in
/// `[0, 1]`). Each tile draws from seeds derived from `master_seed` and its
/// index. Images smaller than a tile are reflect-padded, synthesized as one
/// tile and cropped back.
pub fn synthesize_tiled(
    clean: &Image,
    descriptor: &ControlDescriptor,
    gen: &Generator,
    plan: &TilePlan,
    master_seed: u64,
    opts: &SynthOptions,
) -> Result<Synthesis> {
    if clean.channels != opts.space.channels() || clean.channels != gen.config.image_channels {
        return Err(Error::Shape(format!(
            "{:?} synthesis with a {}-channel generator got a {}-channel image",
            opts.space, gen.config.image_channels, clean.channels
        )));
    }
    if (clean.height, clean.width) != (plan.height, plan.width) {
        return Err(Error::Shape("tile plan was made for a different image size".into()));
    }
    let scale = opts.space.scale();
    let unit = clean.map(|v| v / scale);
    let (ph, pw) = (clean.height.max(plan.tile_size), clean.width.max(plan.tile_size));
    let (work, work_plan) = if (ph, pw) != (clean.height, clean.width) {
        (pad_reflect(&unit, ph, pw), plan_tiles(ph, pw, plan.tile_size, plan.overlap)?.with_blend(plan.blend))
    } else {
        (unit, plan.clone())
    };
    let (th, tw) = (work_plan.tile_size.min(ph), work_plan.tile_size.min(pw));
    let cm = build_control_map(descriptor, th, tw, opts.mode, &opts.norm)?.planes.to_tensor();
    let mut noise = Image::zeros(clean.channels, ph, pw);
    for (k, ((y0, x0), w)) in work_plan.origins().into_iter().zip(work_plan.blend_weights()).enumerate() {
        let crop = work.crop(y0, x0, th, tw)?;
        let mut seeds = NoiseSeeds::new(derive_seed(master_seed, k as u64, PURPOSE_TILE), &gen.config)?;
        let out = Image::from_tensor(&gen.sample(&crop.to_tensor(), &cm, &mut seeds)?, 0);
        for c in 0..clean.channels {
            for y in 0..th {
                for x in 0..tw {
                    let v = noise.get(c, y0 + y, x0 + x) + w[y * tw + x] * out.get(c, y, x);
                    noise.set(c, y0 + y, x0 + x, v);
                }
            }
        }
    }
    let noise = if (ph, pw) != (clean.height, clean.width) { noise.crop(0, 0, clean.height, clean.width)? } else { noise };
    let noisy = Image {
        data: clean
            .data
            .iter()
            .zip(&noise.data)
            .map(|(&c, &n)| match opts.space {
                ColorSpace::Srgb => (c + scale * n).round().clamp(0.0, 255.0),
                ColorSpace::Raw => (c + n).clamp(0.0, 1.0),
            })
            .collect(),
        ..clean.clone()
    };
    Ok(Synthesis { noisy, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Brandmark;
    use crate::generator::{GeneratorConfig, Variant};
    use proptest::prelude::*;

    #[test]
    fn single_tile() {
        let p = plan_tiles(128, 128, 128, 25).unwrap();
        assert_eq!(p.origins(), vec![(0, 0)]);
        assert!(p.blend_weights()[0].iter().all(|&w| w == 1.0));
    }

    #[test]
    fn inward_shift() {
        let p = plan_tiles(200, 200, 128, 25).unwrap();
        assert_eq!(p.rows, vec![0, 72]);
        assert_eq!(p.cols, vec![0, 72]);
    }

    #[test]
    fn rejects_wide_overlap() {
        assert!(matches!(plan_tiles(64, 64, 50, 25), Err(Error::Config(_))));
    }

    #[test]
    fn midline_weights_are_hard_outside_crossfade() {
        // Overlap [72, 128), midline 100, ramp over [99, 101).
        let p = plan_tiles(1, 200, 128, 25).unwrap();
        let w = p.blend_weights();
        assert_eq!(w[0][98], 1.0);
        assert_eq!(w[0][101], 0.0);
        assert_eq!(w[1][101 - 72], 1.0);
        assert!((w[0][99] - 0.75).abs() < 1e-6 && (w[0][100] - 0.25).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn weights_partition_unity(h in 1usize..300, w in 1usize..300, tile in 8usize..140, ov in 0usize..40, linear in any::<bool>()) {
            prop_assume!(tile > 2 * ov);
            let mut p = plan_tiles(h, w, tile, ov).unwrap();
            if linear {
                p = p.with_blend(BlendMode::Linear);
            }
            for s in p.weight_sum() {
                prop_assert!((s - 1.0).abs() <= 1e-6);
            }
        }

        #[test]
        fn tiles_cover_and_stay_inside(h in 1usize..400, w in 1usize..400) {
            let p = plan_tiles(h, w, 64, 10).unwrap();
            for &o in &p.rows {
                prop_assert!(o + 64 <= h.max(64));
            }
            let (th, tw) = (64.min(h), 64.min(w));
            let mut covered = vec![false; h * w];
            for (y0, x0) in p.origins() {
                for y in y0..y0 + th {
                    for x in x0..x0 + tw {
                        covered[y * w + x] = true;
                    }
                }
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
    }

    fn tiny_gen() -> Generator {
        let cfg = GeneratorConfig {
            width: 4,
            blocks_per_stage: 1,
            stages: 1,
            seed_channels: 4,
            variant: Variant::CfgNin,
            ..Default::default()
        };
        Generator::init(cfg, 3).unwrap()
    }

    fn opts() -> SynthOptions {
        SynthOptions { space: ColorSpace::Srgb, mode: EvalMode::Em1, norm: ControlNormalization::default() }
    }

    #[test]
    fn single_tile_matches_direct_forward() {
        let gen = tiny_gen();
        let clean = crate::noise_models::procedural_clean(3, 32, 32, 0.2, 0.8, 1).map(|v| (v * 255.0).round());
        let d = ControlDescriptor::new(Brandmark::IP, 400);
        let plan = plan_tiles(32, 32, 32, 4).unwrap();
        let s = synthesize_tiled(&clean, &d, &gen, &plan, 9, &opts()).unwrap();
        let cm = build_control_map(&d, 32, 32, EvalMode::Em1, &ControlNormalization::default()).unwrap();
        let mut seeds = NoiseSeeds::new(derive_seed(9, 0, PURPOSE_TILE), &gen.config).unwrap();
        let direct = gen.sample(&clean.map(|v| v / 255.0).to_tensor(), &cm.planes.to_tensor(), &mut seeds).unwrap();
        assert_eq!(s.noise.data, direct.data().to_vec());
        for (i, &v) in s.noisy.data.iter().enumerate() {
            assert_eq!(v, (clean.data[i] + 255.0 * direct.data()[i]).round().clamp(0.0, 255.0));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let gen = tiny_gen();
        let clean = Image::filled(3, 50, 70, 128.0);
        let d = ControlDescriptor::new(Brandmark::GP, 100);
        let plan = plan_tiles(50, 70, 32, 6).unwrap();
        let a = synthesize_tiled(&clean, &d, &gen, &plan, 1, &opts()).unwrap();
        let b = synthesize_tiled(&clean, &d, &gen, &plan, 1, &opts()).unwrap();
        let c = synthesize_tiled(&clean, &d, &gen, &plan, 2, &opts()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.noise, c.noise);
    }

    #[test]
    fn small_image_padded_then_cropped() {
        let gen = tiny_gen();
        let clean = Image::filled(3, 20, 9, 100.0);
        let d = ControlDescriptor::new(Brandmark::GP, 100);
        let plan = plan_tiles(20, 9, 32, 6).unwrap();
        let s = synthesize_tiled(&clean, &d, &gen, &plan, 1, &opts()).unwrap();
        assert_eq!((s.noisy.height, s.noisy.width), (20, 9));
        assert!(s.noisy.data.iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
    }
}
