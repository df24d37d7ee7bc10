//! Noise-distribution metrics: fixed-bin histograms, forward KL, patch-wise
//! and stacked evaluation, temporal variance, spatial correlation and
//! variance-vs-intensity curves.

mod report;
mod stats;

use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};

pub use report::{
    evaluate_em1, evaluate_em2, validate_report_json, EvalMap, EvaluationReport, REPORT_KEYS,
};
pub use stats::{
    curve_csv, spatial_correlation, temporal_variance, temporal_variance_real, variance_vs_intensity,
    CorrelationRow, CurveBin, GeneratorSampler, NoiseSampler, OracleSampler, TemporalStats, VarianceCurve,
    FLATNESS_STD,
};

/// Smoothing mass added to every bin before the KL sum.
pub const KL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HistMode {
    /// `[-260, 261]`, width 4, last bin truncated at 261.
    Em1Srgb,
    /// `[-0.1, 0.1]`, 64 bins.
    Em1Raw,
    /// One bin per integer in `[-255, 255]`.
    Em2Srgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub mode: HistMode,
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn em1_srgb() -> Self {
        HistogramSpec { mode: HistMode::Em1Srgb, lo: -260.0, hi: 261.0, bin_width: 4.0, bins: 131 }
    }

    pub fn em1_raw() -> Self {
        HistogramSpec { mode: HistMode::Em1Raw, lo: -0.1, hi: 0.1, bin_width: 0.2 / 64.0, bins: 64 }
    }

    /// Bins centred on integers: bin `i` holds the value `i - 255`.
    pub fn em2_srgb() -> Self {
        HistogramSpec { mode: HistMode::Em2Srgb, lo: -255.5, hi: 255.5, bin_width: 1.0, bins: 511 }
    }

    pub fn of(mode: HistMode) -> Self {
        match mode {
            HistMode::Em1Srgb => Self::em1_srgb(),
            HistMode::Em1Raw => Self::em1_raw(),
            HistMode::Em2Srgb => Self::em2_srgb(),
        }
    }

    /// `[lo, hi)` of bin `i`; the last bin ends at `hi`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let a = self.lo + i as f64 * self.bin_width;
        let b = if i + 1 == self.bins { self.hi } else { self.lo + (i + 1) as f64 * self.bin_width };
        (a, b)
    }

    /// Bin of `v`, and whether it had to be clamped into an end bin.
    pub fn bin_index(&self, v: f64) -> (usize, bool) {
        if v < self.lo {
            return (0, true);
        }
        if v >= self.hi {
            return (self.bins - 1, v > self.hi);
        }
        let mut i = (((v - self.lo) / self.bin_width).floor() as usize).min(self.bins - 1);
        // Keep the index consistent with the edges as computed by `edges`.
        if i > 0 && v < self.edges(i).0 {
            i -= 1;
        } else if i + 1 < self.bins && v >= self.edges(i + 1).0 {
            i += 1;
        }
        (i, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub spec: HistogramSpec,
    /// Normalized bin masses (all zero if no value was given).
    pub masses: Vec<f64>,
    pub count: usize,
    /// Values that fell outside the range and were clamped.
    pub clamped: usize,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>, spec: HistogramSpec) -> Self {
        let mut counts = vec![0u64; spec.bins];
        let (mut n, mut clamped) = (0usize, 0usize);
        for v in values {
            let (i, c) = spec.bin_index(v);
            counts[i] += 1;
            n += 1;
            clamped += c as usize;
        }
        let masses = counts.iter().map(|&c| if n > 0 { c as f64 / n as f64 } else { 0.0 }).collect();
        Histogram { spec, masses, count: n, clamped }
    }

    /// `bin_lo,bin_hi,mass` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,mass\n");
        for (i, m) in self.masses.iter().enumerate() {
            let (a, b) = self.spec.edges(i);
            s.push_str(&format!("{a},{b},{m}\n"));
        }
        s
    }
}

/// Histogram of every value of a `size x size` patch.
pub fn hist_em1_sized(patch: &Image, size: usize, spec: HistogramSpec) -> Result<Histogram> {
    if patch.height != size || patch.width != size {
        return Err(Error::Shape(format!("EM-1 patches are {size}x{size}, got {}x{}", patch.height, patch.width)));
    }
    Ok(Histogram::from_values(patch.data.iter().map(|&v| v as f64), spec))
}

/// Histogram of a 32x32 noise patch.
pub fn hist_em1(patch: &Image, spec: HistogramSpec) -> Result<Histogram> {
    hist_em1_sized(patch, 32, spec)
}

/// Integer-bin histogram over stacked sRGB residuals (rounded first).
pub fn hist_em2(values: impl IntoIterator<Item = f64>) -> Histogram {
    let h = Histogram::from_values(values.into_iter().map(f64::round), HistogramSpec::em2_srgb());
    if h.clamped > 0 {
        log::warn!("{} residuals outside [-255, 255] were clipped", h.clamped);
    }
    h
}

/// `Σ p ln(p / q)` over raw masses after adding [`KL_EPS`] to every bin of
/// both and renormalizing.
pub fn kl_masses(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum::<f64>() + KL_EPS * p.len() as f64;
    let sq: f64 = q.iter().sum::<f64>() + KL_EPS * q.len() as f64;
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = (a + KL_EPS) / sp;
            let b = (b + KL_EPS) / sq;
            a * (a / b).ln()
        })
        .sum()
}

/// Forward KL with `p` the real and `q` the synthetic histogram.
pub fn kl_forward(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.spec != q.spec {
        return Err(Error::Spec(format!("histogram specs differ: {:?} vs {:?}", p.spec.mode, q.spec.mode)));
    }
    Ok(kl_masses(&p.masses, &q.masses))
}
