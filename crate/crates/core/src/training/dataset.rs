use rand::Rng;

use super::pick;
use crate::data::{
    compute_residual, control_values, ColorSpace, ControlNormalization, EvalMode, Image, ImagePair,
};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One training patch in model units: clean in `[0, 1]`, residual in
/// `[-1, 1]`, plus its control values.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub clean: Image,
    pub noise: Image,
    pub control: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pub space: ColorSpace,
    pub mode: EvalMode,
    pub items: Vec<TrainItem>,
}

/// Crops stacked into tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub clean: Tensor<f32>,
    pub noise: Tensor<f32>,
    pub cm: Tensor<f32>,
}

impl TrainingSet {
    pub fn from_pairs(pairs: &[ImagePair], mode: EvalMode, norm: &ControlNormalization) -> Result<Self> {
        let space = pairs.first().map(|p| p.space).ok_or_else(|| Error::Config("no training pairs".into()))?;
        let mut items = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.space != space {
                return Err(Error::Config("training pairs mix colour spaces".into()));
            }
            let k = 1.0 / space.scale();
            items.push(TrainItem {
                clean: p.clean.map(|v| v * k),
                noise: compute_residual(p)?.map(|v| v * k),
                control: control_values(&p.descriptor, mode, norm),
            });
        }
        Ok(TrainingSet { space, mode, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `n` random `size x size` crops of uniformly chosen items.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, size: usize, rng: &mut R) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let c = self.space.channels();
        let k = self.items[0].control.len();
        let shape = Shape::new(n, c, size, size);
        let (mut clean, mut noise, mut cm) =
            (Tensor::zeros(shape), Tensor::zeros(shape), Tensor::zeros(shape.with_c(k)));
        for s in 0..n {
            let item = &self.items[pick(rng, self.items.len())];
            if item.clean.height < size || item.clean.width < size {
                return Err(Error::Config(format!(
                    "crop size {size} exceeds a {}x{} training patch",
                    item.clean.height, item.clean.width
                )));
            }
            let y = pick(rng, item.clean.height - size + 1);
            let x = pick(rng, item.clean.width - size + 1);
            clean.sample_mut(s).copy_from_slice(&item.clean.crop(y, x, size, size)?.data);
            noise.sample_mut(s).copy_from_slice(&item.noise.crop(y, x, size, size)?.data);
            for (ch, &v) in item.control.iter().enumerate() {
                cm.plane_mut(s, ch).fill(v);
            }
        }
        Ok(Batch { clean, noise, cm })
    }
}
