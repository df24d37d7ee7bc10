//! Train/test partitions and patch extraction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalMode, Image, InstanceName};
use crate::error::{Error, Result};

/// What the splitter needs to know about an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub name: String,
    pub scene: String,
    pub height: usize,
    pub width: usize,
}

impl InstanceMeta {
    /// Scene is the first token of the instance name.
    pub fn new(name: &str, height: usize, width: usize) -> Result<Self> {
        let parsed: InstanceName = name.parse()?;
        Ok(InstanceMeta { name: name.to_string(), scene: parsed.scene, height, width })
    }
}

/// A square crop of one instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRecord {
    pub instance: String,
    pub scene: String,
    pub y: usize,
    pub x: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub mode: EvalMode,
    pub train: Vec<PatchRecord>,
    pub test: Vec<PatchRecord>,
}

/// Externally supplied EM-1 instance lists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Top-left corners of full `size x size` tiles in row-major order.
pub fn patch_origins(height: usize, width: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if size == 0 || stride == 0 || size > height || size > width {
        return Vec::new();
    }
    let ys = (0..=height - size).step_by(stride);
    ys.flat_map(|y| (0..=width - size).step_by(stride).map(move |x| (y, x))).collect()
}

/// Row-major square tiles; tiles that would run past the border are dropped.
pub fn extract_patches(image: &Image, size: usize, stride: usize) -> Vec<Image> {
    patch_origins(image.height, image.width, size, stride)
        .into_iter()
        .map(|(y, x)| image.crop(y, x, size, size).expect("origin inside image"))
        .collect()
}

fn crops_of(meta: &InstanceMeta, size: usize) -> Vec<PatchRecord> {
    patch_origins(meta.height, meta.width, size, size)
        .into_iter()
        .map(|(y, x)| PatchRecord { instance: meta.name.clone(), scene: meta.scene.clone(), y, x, size })
        .collect()
}

/// Partitions non-overlapping `crop x crop` patches into train and test.
///
/// EM-1 follows `lists` verbatim (instances named in neither list are left
/// out). EM-2 shuffles each scene's crops under `seed` and sends
/// `max(1, round(0.2 n))` of them to test.
pub fn make_split(
    instances: &[InstanceMeta],
    mode: EvalMode,
    seed: u64,
    crop: usize,
    lists: Option<&SplitLists>,
) -> Result<DatasetSplit> {
    if crop == 0 {
        return Err(Error::Config("crop size must be positive".into()));
    }
    match mode {
        EvalMode::Em1 => {
            let lists = lists.ok_or_else(|| Error::Config("EM-1 needs train/test list files".into()))?;
            let known: BTreeSet<&str> = instances.iter().map(|m| m.name.as_str()).collect();
            for name in lists.train.iter().chain(&lists.test) {
                if !known.contains(name.as_str()) {
                    return Err(Error::Config(format!("list names unknown instance {name}")));
                }
            }
            let test: BTreeSet<&str> = lists.test.iter().map(String::as_str).collect();
            if let Some(both) = lists.train.iter().find(|n| test.contains(n.as_str())) {
                return Err(Error::Config(format!("{both} is listed for both train and test")));
            }
            let pick = |names: &[String]| -> Vec<PatchRecord> {
                names
                    .iter()
                    .flat_map(|n| crops_of(instances.iter().find(|m| &m.name == n).expect("checked above"), crop))
                    .collect()
            };
            Ok(DatasetSplit { mode, train: pick(&lists.train), test: pick(&lists.test) })
        }
        EvalMode::Em2 => {
            let mut scenes: BTreeMap<&str, Vec<PatchRecord>> = BTreeMap::new();
            for m in instances {
                scenes.entry(m.scene.as_str()).or_default().extend(crops_of(m, crop));
            }
            if scenes.is_empty() {
                return Err(Error::Config("EM-2 split needs at least one instance".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (scene, mut crops) in scenes {
                if crops.is_empty() {
                    return Err(Error::Config(format!("scene {scene} has no full {crop}x{crop} crop")));
                }
                crops.sort();
                crops.shuffle(&mut rng);
                let n_test = ((0.2 * crops.len() as f64).round() as usize).max(1);
                test.extend(crops.drain(..n_test));
                train.extend(crops);
            }
            Ok(DatasetSplit { mode, train, test })
        }
    }
}
