use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam without weight decay. Moments are kept per parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// Updates applied so far.
    pub t: u64,
    m: IndexMap<String, Tensor<f32>>,
    v: IndexMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamStore<f32>) -> Self {
        let zeros = || params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        Adam { cfg, t: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &IndexMap<String, Tensor<f32>>, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).ok_or_else(|| Error::Param(format!("no parameter {name}")))?;
            let m = self.m.get_mut(name).expect("moments follow params");
            let v = self.v.get_mut(name).expect("moments follow params");
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient for {name} has shape {}", g.shape())));
            }
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let g = g as f64;
                let mn = b1 * *m as f64 + (1.0 - b1) * g;
                let vn = b2 * *v as f64 + (1.0 - b2) * g * g;
                *m = mn as f32;
                *v = vn as f32;
                let step = lr * (mn / c1) / ((vn / c2).sqrt() + self.cfg.eps);
                *p = (*p as f64 - step) as f32;
            }
        }
        Ok(())
    }

    pub fn write_into(&self, a: &mut Archive, prefix: &str) {
        a.meta[format!("{prefix}t")] = serde_json::json!(self.t);
        for (k, t) in &self.m {
            a.insert(format!("{prefix}m/{k}"), t);
        }
        for (k, t) in &self.v {
            a.insert(format!("{prefix}v/{k}"), t);
        }
    }

    pub fn read_from(a: &Archive, prefix: &str, cfg: AdamConfig, params: &ParamStore<f32>) -> Result<Self> {
        let t = a
            .meta
            .get(format!("{prefix}t"))
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}t")))?;
        let mut opt = Adam::new(cfg, params);
        opt.t = t;
        for (which, store) in [("m", &mut opt.m), ("v", &mut opt.v)] {
            for (k, slot) in store.iter_mut() {
                let name = format!("{prefix}{which}/{k}");
                let got = a.arrays.get(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
                if got.shape() != slot.shape() {
                    return Err(Error::Shape(format!("{name} has shape {}", got.shape())));
                }
                *slot = got.clone();
            }
        }
        Ok(opt)
    }
}
