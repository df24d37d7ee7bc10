//! SNAF and SNAF-NI blocks.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::kernels::PadMode;
use crate::params::{ParamSpec, ParamVars};
use crate::tensor::{Scalar, Tensor};

pub(crate) const LN_EPS: f64 = 1e-6;

/// Parameters of one block at `width` channels, prefixed with `prefix.`.
pub fn block_specs(prefix: &str, width: usize, injection: bool) -> Vec<ParamSpec> {
    let c = width;
    let mut specs = vec![
        ParamSpec::vector(format!("{prefix}.norm.weight"), c, 1.0),
        ParamSpec::vector(format!("{prefix}.norm.bias"), c, 0.0),
        ParamSpec::conv(format!("{prefix}.expand.weight"), 2 * c, c, 1, 1.0),
        ParamSpec::vector(format!("{prefix}.expand.bias"), 2 * c, 0.0),
        ParamSpec::conv(format!("{prefix}.dw.weight"), 2 * c, 1, 3, 1.0),
        ParamSpec::vector(format!("{prefix}.dw.bias"), 2 * c, 0.0),
        ParamSpec::conv(format!("{prefix}.sca.weight"), c, c, 1, 1.0),
        ParamSpec::vector(format!("{prefix}.sca.bias"), c, 0.0),
        ParamSpec::conv(format!("{prefix}.project.weight"), c, c, 1, 1.0),
        ParamSpec::vector(format!("{prefix}.project.bias"), c, 0.0),
        ParamSpec::scalar(format!("{prefix}.gamma"), 1.0),
    ];
    if injection {
        specs.push(ParamSpec::scalar(format!("{prefix}.alpha"), 0.0));
    }
    specs
}

fn block<T: Scalar>(x: &Var<T>, p: &ParamVars<T>, prefix: &str, noise: Option<&Tensor<T>>) -> Result<Var<T>> {
    let get = |name: &str| p.get(&format!("{prefix}.{name}"));
    let width = get("norm.weight").shape().numel();
    if x.shape().c != width {
        return Err(Error::Shape(format!("block {prefix} expects {width} channels, got {}", x.shape().c)));
    }
    let h = x.layer_norm_channels(get("norm.weight"), get("norm.bias"), LN_EPS);
    let h = h.conv2d(get("expand.weight"), Some(get("expand.bias")), PadMode::Reflect);
    let mut h = h.depthwise3x3(get("dw.weight"), get("dw.bias"), PadMode::Reflect);
    if let Some(eps) = noise {
        let s = x.shape();
        if eps.shape() != crate::tensor::Shape::new(s.n, 1, s.h, s.w) {
            return Err(Error::Shape(format!("injection map {} does not match features {s}", eps.shape())));
        }
        h = h.add_scaled_plane(eps.clone(), get("alpha"));
    }
    let h = h.simple_gate();
    let att = h.global_avg_pool().conv2d(get("sca.weight"), Some(get("sca.bias")), PadMode::Reflect);
    let h = h.mul_channel(&att);
    let h = h.conv2d(get("project.weight"), Some(get("project.bias")), PadMode::Reflect);
    Ok(x.add(&h.mul_scalar(get("gamma"))))
}

/// `x + γ·f(x)`, with `f` the noise-free block branch.
pub fn snaf_forward<T: Scalar>(x: &Var<T>, p: &ParamVars<T>, prefix: &str) -> Result<Var<T>> {
    block(x, p, prefix, None)
}

/// As [`snaf_forward`], with `α·ε` added after the depthwise convolution.
/// `eps` is `[n, 1, h, w]` and is broadcast over channels.
pub fn snaf_ni_forward<T: Scalar>(x: &Var<T>, p: &ParamVars<T>, prefix: &str, eps: &Tensor<T>) -> Result<Var<T>> {
    block(x, p, prefix, Some(eps))
}
