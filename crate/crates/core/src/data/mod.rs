//! Clean/noisy image pairs, capture metadata and control maps.

mod bayer;
mod io;
mod split;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use bayer::{pack_raw, unpack_raw};
pub use io::{
    load_instance, load_instance_pairs, read_list_file, read_png_rgb, read_raw_bin, write_png_rgb, write_raw_bin,
    RAW_MAGIC,
};
pub use split::{extract_patches, make_split, patch_origins, DatasetSplit, InstanceMeta, PatchRecord, SplitLists};

/// Smartphone camera in the capture metadata. The declaration order is the
/// one-hot order of the control map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Brandmark {
    G4,
    GP,
    IP,
    N6,
    S6,
}

impl Brandmark {
    pub const ALL: [Brandmark; 5] = [Brandmark::G4, Brandmark::GP, Brandmark::IP, Brandmark::N6, Brandmark::S6];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Brandmark::G4 => "G4",
            Brandmark::GP => "GP",
            Brandmark::IP => "IP",
            Brandmark::N6 => "N6",
            Brandmark::S6 => "S6",
        }
    }
}

impl FromStr for Brandmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Brandmark::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Metadata(format!("unknown brandmark {s:?}")))
    }
}

impl fmt::Display for Brandmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scene brightness code: low, normal, high.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Brightness {
    L,
    N,
    H,
}

impl Brightness {
    /// Ordinal encoding used in the control map.
    pub fn ordinal(self) -> f32 {
        match self {
            Brightness::L => 0.0,
            Brightness::N => 0.5,
            Brightness::H => 1.0,
        }
    }
}

impl FromStr for Brightness {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Brightness::L),
            "N" => Ok(Brightness::N),
            "H" => Ok(Brightness::H),
            _ => Err(Error::Metadata(format!("unknown brightness code {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlDescriptor {
    pub brandmark: Brandmark,
    pub iso: u32,
    pub shutter_speed: f64,
    pub illuminant_temperature: f64,
    pub brightness: Brightness,
}

impl ControlDescriptor {
    pub fn new(brandmark: Brandmark, iso: u32) -> Self {
        ControlDescriptor { brandmark, iso, shutter_speed: 1.0, illuminant_temperature: 1.0, brightness: Brightness::N }
    }
}

/// A parsed instance directory name,
/// `<scene>_<instance>_<brandmark>_<iso>_<shutter>_<temperature>_<brightness>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceName {
    pub scene: String,
    pub instance: String,
    pub descriptor: ControlDescriptor,
}

impl FromStr for InstanceName {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        let bad = |what: &str| Error::Metadata(format!("{name:?}: {what}"));
        let tokens: Vec<&str> = name.split('_').collect();
        if tokens.len() != 7 {
            return Err(bad("expected 7 underscore-separated tokens"));
        }
        let brandmark: Brandmark = tokens[2].parse()?;
        let iso: u32 = tokens[3].parse().map_err(|_| bad("ISO is not an integer"))?;
        if iso == 0 {
            return Err(bad("ISO must be positive"));
        }
        let positive = |t: &str, what: &str| -> Result<f64> {
            match t.parse::<f64>() {
                Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
                _ => Err(bad(&format!("{what} is not a positive number"))),
            }
        };
        let shutter_speed = positive(tokens[4], "shutter speed")?;
        let illuminant_temperature = positive(tokens[5], "illuminant temperature")?;
        let brightness: Brightness = tokens[6].parse()?;
        Ok(InstanceName {
            scene: tokens[0].to_string(),
            instance: tokens[1].to_string(),
            descriptor: ControlDescriptor { brandmark, iso, shutter_speed, illuminant_temperature, brightness },
        })
    }
}

/// Colour space of a pair. sRGB values are integers in `[0, 255]`; raw values
/// are floats in `[0, 1]`, packed to four channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Srgb,
    Raw,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Srgb => 3,
            ColorSpace::Raw => 4,
        }
    }

    /// Factor that maps stored values to the model's unit range.
    pub fn scale(self) -> f32 {
        match self {
            ColorSpace::Srgb => 255.0,
            ColorSpace::Raw => 1.0,
        }
    }

    pub fn max_value(self) -> f32 {
        self.scale()
    }

    pub fn channel_names(self) -> &'static [&'static str] {
        match self {
            ColorSpace::Srgb => &["R", "G", "B"],
            ColorSpace::Raw => &["R", "G1", "G2", "B"],
        }
    }
}

/// Which evaluation protocol a dataset is prepared for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Fixed train/test lists, brandmark + ISO conditioning.
    Em1,
    /// Per-scene 80/20 crop split, full capture conditioning.
    Em2,
}

impl EvalMode {
    pub fn control_channels(self) -> usize {
        match self {
            EvalMode::Em1 => 6,
            EvalMode::Em2 => 9,
        }
    }
}

/// Planar `channels x height x width` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values do not fit {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Image { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.height * self.width;
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Image> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y},{x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let p = self.plane(c);
            for row in y..y + h {
                data.extend_from_slice(&p[row * self.width + x..row * self.width + x + w]);
            }
        }
        Ok(Image { channels: self.channels, height: h, width: w, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    /// Channels selected by index, in the given order.
    pub fn select_channels(&self, idx: &[usize]) -> Image {
        let mut data = Vec::with_capacity(idx.len() * self.height * self.width);
        for &c in idx {
            data.extend_from_slice(self.plane(c));
        }
        Image { channels: idx.len(), height: self.height, width: self.width, data }
    }

    /// A batch-of-one tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, self.channels, self.height, self.width), self.data.clone())
            .expect("image dimensions match buffer")
    }

    /// Sample `n` of a batch.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Image {
        let s = t.shape();
        Image { channels: s.c, height: s.h, width: s.w, data: t.sample(n).to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub clean: Image,
    pub noisy: Image,
    pub space: ColorSpace,
    pub descriptor: ControlDescriptor,
}

impl ImagePair {
    pub fn new(clean: Image, noisy: Image, space: ColorSpace, descriptor: ControlDescriptor) -> Result<Self> {
        if !clean.same_shape(&noisy) {
            return Err(Error::Shape("clean and noisy images differ in shape".into()));
        }
        if clean.channels != space.channels() {
            return Err(Error::Shape(format!(
                "{:?} pairs have {} channels, got {}",
                space,
                space.channels(),
                clean.channels
            )));
        }
        Ok(ImagePair { clean, noisy, space, descriptor })
    }
}

/// `noisy - clean`. Exact for integer-valued sRGB images.
pub fn compute_residual(pair: &ImagePair) -> Result<Image> {
    if !pair.clean.same_shape(&pair.noisy) {
        return Err(Error::Shape("clean and noisy images differ in shape".into()));
    }
    let data = pair.noisy.data.iter().zip(&pair.clean.data).map(|(&n, &c)| n - c).collect();
    Image::new(pair.clean.channels, pair.clean.height, pair.clean.width, data)
}

/// Maxima used to bring scalar capture settings into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlNormalization {
    pub iso_max: f64,
    pub shutter_max: f64,
    pub temperature_max: f64,
}

impl Default for ControlNormalization {
    fn default() -> Self {
        ControlNormalization { iso_max: 3200.0, shutter_max: 1.0, temperature_max: 1.0 }
    }
}

impl ControlNormalization {
    /// ISO is always scaled by 3200; shutter and temperature by the dataset maxima.
    pub fn from_descriptors<'a>(descriptors: impl IntoIterator<Item = &'a ControlDescriptor>) -> Self {
        let mut norm = ControlNormalization::default();
        let (mut s, mut t) = (0.0f64, 0.0f64);
        for d in descriptors {
            s = s.max(d.shutter_speed);
            t = t.max(d.illuminant_temperature);
        }
        if s > 0.0 {
            norm.shutter_max = s;
        }
        if t > 0.0 {
            norm.temperature_max = t;
        }
        norm
    }
}

/// Spatially constant conditioning planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlMap {
    pub planes: Image,
    pub layout: Vec<String>,
}

impl ControlMap {
    pub fn channels(&self) -> usize {
        self.layout.len()
    }

    /// Per-plane values (every plane is constant).
    pub fn values(&self) -> Vec<f32> {
        (0..self.planes.channels).map(|c| self.planes.plane(c)[0]).collect()
    }
}

/// Conditioning values for a descriptor: 5 one-hot brandmark entries and the
/// normalized ISO, plus shutter, temperature and brightness in EM-2 mode.
pub fn control_values(descriptor: &ControlDescriptor, mode: EvalMode, norm: &ControlNormalization) -> Vec<f32> {
    let mut v = vec![0.0f32; 5];
    v[descriptor.brandmark.index()] = 1.0;
    v.push((descriptor.iso as f64 / norm.iso_max).clamp(0.0, 1.0) as f32);
    if mode == EvalMode::Em2 {
        v.push((descriptor.shutter_speed / norm.shutter_max).clamp(0.0, 1.0) as f32);
        v.push((descriptor.illuminant_temperature / norm.temperature_max).clamp(0.0, 1.0) as f32);
        v.push(descriptor.brightness.ordinal());
    }
    v
}

pub fn control_layout(mode: EvalMode) -> Vec<String> {
    let mut names: Vec<String> = Brandmark::ALL.iter().map(|b| format!("brandmark_{b}")).collect();
    names.push("iso".into());
    if mode == EvalMode::Em2 {
        names.extend(["shutter", "temperature", "brightness"].map(String::from));
    }
    names
}

pub fn build_control_map(
    descriptor: &ControlDescriptor,
    height: usize,
    width: usize,
    mode: EvalMode,
    norm: &ControlNormalization,
) -> Result<ControlMap> {
    if height == 0 || width == 0 {
        return Err(Error::Shape("control map needs a non-empty spatial size".into()));
    }
    let values = control_values(descriptor, mode, norm);
    let plane = height * width;
    let mut data = Vec::with_capacity(values.len() * plane);
    for v in &values {
        data.extend(std::iter::repeat_n(*v, plane));
    }
    Ok(ControlMap { planes: Image::new(values.len(), height, width, data)?, layout: control_layout(mode) })
}

/// Parses an instance directory's final path component.
pub fn parse_instance_dir(dir: &Path) -> Result<InstanceName> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Metadata(format!("{} has no usable name", dir.display())))?;
    name.parse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sidd_names() {
        let n: InstanceName = "0001_001_S6_00100_00060_3200_L".parse().unwrap();
        assert_eq!(n.scene, "0001");
        assert_eq!(n.descriptor.brandmark, Brandmark::S6);
        assert_eq!(n.descriptor.iso, 100);
        assert_eq!(n.descriptor.shutter_speed, 60.0);
        assert_eq!(n.descriptor.illuminant_temperature, 3200.0);
        assert_eq!(n.descriptor.brightness, Brightness::L);
        let n: InstanceName = "0009_003_IP_00800_01000_5500_N".parse().unwrap();
        assert_eq!((n.descriptor.brandmark, n.descriptor.iso), (Brandmark::IP, 800));
    }

    #[test]
    fn rejects_malformed_names() {
        for bad in ["0001_001_XX_00100_00060_3200_L", "0001_001_S6_abc_00060_3200_L", "0001_S6", "0001_001_S6_00000_00060_3200_L", "0001_001_S6_00100_00060_3200_Q"] {
            assert!(matches!(bad.parse::<InstanceName>(), Err(Error::Metadata(_))), "{bad}");
        }
    }

    #[test]
    fn control_map_em1_values() {
        let norm = ControlNormalization::default();
        let cm = build_control_map(&ControlDescriptor::new(Brandmark::S6, 3200), 4, 4, EvalMode::Em1, &norm).unwrap();
        assert_eq!(cm.channels(), 6);
        assert_eq!(cm.values(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let cm = build_control_map(&ControlDescriptor::new(Brandmark::G4, 100), 2, 3, EvalMode::Em1, &norm).unwrap();
        assert_eq!(cm.values()[5], 0.03125);
        assert_eq!(cm.values()[0], 1.0);
    }

    #[test]
    fn control_map_em2_adds_capture_settings() {
        let d = ControlDescriptor {
            brandmark: Brandmark::IP,
            iso: 6400,
            shutter_speed: 50.0,
            illuminant_temperature: 4400.0,
            brightness: Brightness::H,
        };
        let norm = ControlNormalization { iso_max: 3200.0, shutter_max: 100.0, temperature_max: 5500.0 };
        let cm = build_control_map(&d, 3, 2, EvalMode::Em2, &norm).unwrap();
        assert_eq!(cm.layout.len(), 9);
        let v = cm.values();
        assert_eq!(v[5], 1.0, "ISO clipped to 1");
        assert_eq!(v[6], 0.5);
        assert!((v[7] - 0.8).abs() < 1e-7);
        assert_eq!(v[8], 1.0);
    }

    #[test]
    fn control_planes_are_constant_and_one_hot() {
        let norm = ControlNormalization::default();
        for b in Brandmark::ALL {
            let cm = build_control_map(&ControlDescriptor::new(b, 400), 5, 7, EvalMode::Em1, &norm).unwrap();
            for c in 0..cm.channels() {
                let p = cm.planes.plane(c);
                let (lo, hi) = p.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                assert_eq!(hi - lo, 0.0);
            }
            let s: f32 = cm.values()[..5].iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn residual_is_exact() {
        let d = ControlDescriptor::new(Brandmark::GP, 100);
        let clean = Image::filled(3, 2, 2, 100.0);
        let mut noisy = clean.clone();
        noisy.set(1, 0, 1, 97.0);
        let pair = ImagePair::new(clean.clone(), noisy.clone(), ColorSpace::Srgb, d.clone()).unwrap();
        let r = compute_residual(&pair).unwrap();
        assert_eq!(r.get(1, 0, 1), -3.0);
        assert_eq!(r.data.iter().filter(|&&v| v != 0.0).count(), 1);
        let same = ImagePair::new(clean.clone(), clean.clone(), ColorSpace::Srgb, d.clone()).unwrap();
        assert!(compute_residual(&same).unwrap().data.iter().all(|&v| v == 0.0));

        let raw = ImagePair::new(Image::filled(4, 1, 1, 0.5), Image::filled(4, 1, 1, 0.52), ColorSpace::Raw, d).unwrap();
        let r = compute_residual(&raw).unwrap();
        assert!((r.data[0] - 0.02).abs() < 1e-6);
    }

    #[test]
    fn residual_shape_mismatch() {
        let d = ControlDescriptor::new(Brandmark::GP, 100);
        let pair = ImagePair {
            clean: Image::zeros(3, 2, 2),
            noisy: Image::zeros(3, 2, 3),
            space: ColorSpace::Srgb,
            descriptor: d,
        };
        assert!(matches!(compute_residual(&pair), Err(Error::Shape(_))));
    }
}
