//! The single JSON run configuration and its command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use camnoise::data::{Brandmark, ColorSpace, ControlDescriptor, ControlNormalization, EvalMode};
use camnoise::discriminator::DiscriminatorConfig;
use camnoise::generator::GeneratorConfig;
use camnoise::inference::BlendMode;
use camnoise::losses::ExtractorSource;
use camnoise::noise_models::HeteroGaussianParams;
use camnoise::training::TrainConfig;
use camnoise::{Error, Result};
use serde::{Deserialize, Serialize};

/// Synthetic heteroscedastic dataset written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Noise parameters per ISO; one descriptor per entry.
    pub params: BTreeMap<u32, HeteroGaussianParams>,
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub brandmark: Brandmark,
    /// Clean intensity range in `[0, 1]`.
    pub lo: f32,
    pub hi: f32,
    /// Fraction of clean images held out as test scenes.
    pub test_fraction: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            params: BTreeMap::from([
                (100, HeteroGaussianParams { sigma_dep_gain: 0.002, sigma_ind_sq: 0.0001 }),
                (800, HeteroGaussianParams { sigma_dep_gain: 0.006, sigma_ind_sq: 0.0004 }),
            ]),
            images: 20,
            height: 64,
            width: 64,
            brandmark: Brandmark::S6,
            lo: 0.1,
            hi: 0.9,
            test_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListFiles {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub tile: usize,
    pub overlap: usize,
    pub blend: BlendMode,
    /// Used for inputs whose folder name carries no capture settings.
    pub descriptor: ControlDescriptor,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            tile: 128,
            overlap: 25,
            blend: BlendMode::Midline,
            descriptor: ControlDescriptor::new(Brandmark::S6, 100),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub patch_size: usize,
    pub curve: bool,
    pub curve_bins: usize,
    pub correlation: bool,
    /// Needs `checkpoint`: repeated generator draws on a flat patch.
    pub temporal: bool,
    pub temporal_draws: usize,
    pub temporal_intensity: f32,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            patch_size: 32,
            curve: true,
            curve_bins: 10,
            correlation: true,
            temporal: false,
            temporal_draws: 1000,
            temporal_intensity: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub split_lists: Option<ListFiles>,
    pub split_crop: usize,
    pub mode: EvalMode,
    pub space: ColorSpace,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub train: TrainConfig,
    pub extractor: ExtractorSource,
    /// Filled in by `train` from the dataset when absent.
    pub normalization: Option<ControlNormalization>,
    pub oracle: Option<OracleConfig>,
    pub synthesis: SynthesisConfig,
    pub evaluation: EvaluationConfig,
    /// Training checkpoint to resume from or synthesize with.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: None,
            split_lists: None,
            split_crop: 256,
            mode: EvalMode::Em1,
            space: ColorSpace::Srgb,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            extractor: ExtractorSource::default(),
            normalization: None,
            oracle: None,
            synthesis: SynthesisConfig::default(),
            evaluation: EvaluationConfig::default(),
            checkpoint: None,
        }
    }
}

/// Environment variable that overrides `dataset_root`.
pub const DATASET_ROOT_ENV: &str = "CAMNOISE_DATASET_ROOT";

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tile: Option<usize>,
    pub overlap: Option<usize>,
    pub mode: Option<EvalMode>,
    pub space: Option<ColorSpace>,
    pub variant: Option<camnoise::generator::Variant>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dataset_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides and derives the channel counts that follow from
    /// space and mode.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.tile {
            self.synthesis.tile = v;
        }
        if let Some(v) = o.overlap {
            self.synthesis.overlap = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.space {
            self.space = v;
        }
        if let Some(v) = o.variant {
            self.generator.variant = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.checkpoint {
            self.checkpoint = Some(v.clone());
        }
        if let Some(v) = &o.dataset_root {
            self.dataset_root = Some(v.clone());
        }
        self.train.seed = self.seed;
        self.train.space = self.space;
        let channels = self.space.channels();
        let controls = self.mode.control_channels();
        self.generator.image_channels = channels;
        self.generator.control_channels = controls;
        self.discriminator.image_channels = channels;
        self.discriminator.control_channels = controls;
        Ok(self)
    }

    /// Writes `resolved_<command>.json` next to the outputs.
    pub fn emit(&self, command: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(format!("resolved_{command}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
