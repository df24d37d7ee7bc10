use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{hist_em1_sized, hist_em2, kl_forward, Histogram, HistogramSpec};
use crate::data::{extract_patches, Brandmark, ColorSpace, Image};
use crate::error::{Error, Result};

/// A noise map (sRGB: integer residuals; raw: unit residuals) with the
/// labels evaluation groups by. `source` names the clean image it belongs
/// to and pairs real with synthetic maps.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMap {
    pub noise: Image,
    pub brandmark: Brandmark,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub mode: String,
    pub per_brandmark: BTreeMap<String, f64>,
    pub aggregate: f64,
    pub per_channel: BTreeMap<String, f64>,
    pub sample_counts: BTreeMap<String, usize>,
}

/// Keys every report JSON carries.
pub const REPORT_KEYS: [&str; 5] = ["mode", "per_brandmark", "aggregate", "per_channel", "sample_counts"];

/// Checks the fixed key schema of a report.
pub fn validate_report_json(v: &serde_json::Value) -> Result<()> {
    let obj = v.as_object().ok_or_else(|| Error::Format("report is not a JSON object".into()))?;
    for k in REPORT_KEYS {
        if !obj.contains_key(k) {
            return Err(Error::Format(format!("report lacks {k:?}")));
        }
    }
    if let Some(k) = obj.keys().find(|k| !REPORT_KEYS.contains(&k.as_str())) {
        return Err(Error::Format(format!("unexpected report key {k:?}")));
    }
    if !obj["mode"].is_string() || !obj["aggregate"].is_number() {
        return Err(Error::Format("report mode must be a string and aggregate a number".into()));
    }
    for k in ["per_brandmark", "per_channel", "sample_counts"] {
        let m = obj[k].as_object().ok_or_else(|| Error::Format(format!("{k} must be an object")))?;
        if !m.values().all(|x| x.is_number()) {
            return Err(Error::Format(format!("{k} values must be numbers")));
        }
    }
    Ok(())
}

fn check_pairs(real: &[EvalMap], synth: &[EvalMap]) -> Result<()> {
    if real.len() != synth.len() {
        return Err(Error::Pairing(format!("{} real maps vs {} synthetic", real.len(), synth.len())));
    }
    for (r, s) in real.iter().zip(synth) {
        if r.source != s.source || r.brandmark != s.brandmark || !r.noise.same_shape(&s.noise) {
            return Err(Error::Pairing(format!("real {} does not pair with synthetic {}", r.source, s.source)));
        }
    }
    Ok(())
}

fn em1_spec(space: ColorSpace) -> HistogramSpec {
    match space {
        ColorSpace::Srgb => HistogramSpec::em1_srgb(),
        ColorSpace::Raw => HistogramSpec::em1_raw(),
    }
}

/// Per-patch forward KL over non-overlapping `patch_size` patches, averaged
/// over all patches (aggregate), per brandmark, and per channel.
pub fn evaluate_em1(real: &[EvalMap], synth: &[EvalMap], space: ColorSpace, patch_size: usize) -> Result<EvaluationReport> {
    check_pairs(real, synth)?;
    let spec = em1_spec(space);
    let names = space.channel_names();
    let mut all = Vec::new();
    let mut by_brand: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_channel: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (r, s) in real.iter().zip(synth) {
        if r.noise.channels != names.len() {
            return Err(Error::Shape(format!("{space:?} maps have {} channels, got {}", names.len(), r.noise.channels)));
        }
        for (pr, ps) in extract_patches(&r.noise, patch_size, patch_size)
            .iter()
            .zip(extract_patches(&s.noise, patch_size, patch_size).iter())
        {
            let kl = kl_forward(&hist_em1_sized(pr, patch_size, spec)?, &hist_em1_sized(ps, patch_size, spec)?)?;
            all.push(kl);
            by_brand.entry(r.brandmark.to_string()).or_default().push(kl);
            for (c, out) in by_channel.iter_mut().enumerate() {
                let hr = Histogram::from_values(pr.plane(c).iter().map(|&v| v as f64), spec);
                let hs = Histogram::from_values(ps.plane(c).iter().map(|&v| v as f64), spec);
                out.push(kl_forward(&hr, &hs)?);
            }
        }
    }
    if all.is_empty() {
        return Err(Error::InsufficientData(format!("no full {patch_size}x{patch_size} patch to evaluate")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvaluationReport {
        mode: format!("EM1_{}", if space == ColorSpace::Srgb { "SRGB" } else { "RAW" }),
        aggregate: mean(&all),
        sample_counts: by_brand.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        per_brandmark: by_brand.iter().map(|(k, v)| (k.clone(), mean(v))).collect(),
        per_channel: names.iter().zip(&by_channel).map(|(n, v)| (n.to_string(), mean(v))).collect(),
    })
}

fn values<'a>(maps: impl Iterator<Item = &'a EvalMap>, channel: Option<usize>) -> Vec<f64> {
    let mut out = Vec::new();
    for m in maps {
        match channel {
            Some(c) => out.extend(m.noise.plane(c).iter().map(|&v| v as f64)),
            None => out.extend(m.noise.data.iter().map(|&v| v as f64)),
        }
    }
    out
}

/// Stacked integer-bin KL per brandmark, over the union, and per channel.
/// Real and synthetic sets need not pair map by map, but every brandmark in
/// the real set must appear in the synthetic one.
pub fn evaluate_em2(real: &[EvalMap], synth: &[EvalMap]) -> Result<EvaluationReport> {
    if real.is_empty() || synth.is_empty() {
        return Err(Error::InsufficientData("EM-2 needs non-empty real and synthetic sets".into()));
    }
    let channels = real[0].noise.channels;
    if channels != 3 || real.iter().chain(synth).any(|m| m.noise.channels != channels) {
        return Err(Error::Spec("EM-2 histograms are defined for 3-channel integer sRGB residuals".into()));
    }
    let brands: std::collections::BTreeSet<Brandmark> = real.iter().map(|m| m.brandmark).collect();
    let mut per_brandmark = BTreeMap::new();
    let mut sample_counts = BTreeMap::new();
    for b in brands {
        let r = values(real.iter().filter(|m| m.brandmark == b), None);
        let s = values(synth.iter().filter(|m| m.brandmark == b), None);
        if s.is_empty() {
            return Err(Error::Pairing(format!("no synthetic maps for brandmark {b}")));
        }
        sample_counts.insert(b.to_string(), r.len());
        per_brandmark.insert(b.to_string(), kl_forward(&hist_em2(r), &hist_em2(s))?);
    }
    let aggregate = kl_forward(&hist_em2(values(real.iter(), None)), &hist_em2(values(synth.iter(), None)))?;
    let mut per_channel = BTreeMap::new();
    for (c, name) in ColorSpace::Srgb.channel_names().iter().enumerate() {
        let kl = kl_forward(&hist_em2(values(real.iter(), Some(c))), &hist_em2(values(synth.iter(), Some(c))))?;
        per_channel.insert(name.to_string(), kl);
    }
    Ok(EvaluationReport { mode: "EM2_SRGB".into(), per_brandmark, aggregate, per_channel, sample_counts })
}
