//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Var`] is a reference-counted node holding its forward value and, when
//! any input requires a gradient, the operation that produced it. Nodes that
//! do not require gradients keep no parents, so inference graphs are freed as
//! soon as intermediate values go out of scope.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::kernels::{self, PadMode};
use crate::tensor::{matmul, Scalar, Shape, Tensor};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

struct Node<T: Scalar> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    op: Option<Op<T>>,
}

pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({}, grad={})", self.0.id, self.0.value.shape(), self.0.requires_grad)
    }
}

enum Op<T: Scalar> {
    Conv2d { x: Var<T>, w: Var<T>, b: Option<Var<T>>, mode: PadMode },
    Depthwise { x: Var<T>, w: Var<T>, b: Var<T>, mode: PadMode },
    LayerNorm { x: Var<T>, gamma: Var<T>, beta: Var<T>, xhat: Tensor<T>, rstd: Vec<T> },
    SimpleGate { x: Var<T> },
    GlobalAvgPool { x: Var<T> },
    MulChannel { x: Var<T>, s: Var<T> },
    MulScalar { x: Var<T>, s: Var<T> },
    AddScaledPlane { x: Var<T>, plane: Tensor<T>, alpha: Var<T> },
    Add { a: Var<T>, b: Var<T> },
    Sub { a: Var<T>, b: Var<T> },
    Scale { x: Var<T>, k: T },
    ChannelAffine { x: Var<T>, scale: Vec<T> },
    Square { x: Var<T> },
    Mean { x: Var<T> },
    Concat { parts: Vec<Var<T>> },
    SelectChannels { x: Var<T>, idx: Vec<usize> },
    LeakyRelu { x: Var<T>, slope: T },
    AvgPool2 { x: Var<T> },
    MaxPool2 { x: Var<T>, argmax: Vec<usize> },
    Gram { x: Var<T> },
    MinibatchStd { x: Var<T>, centered: Tensor<T>, std: Tensor<T> },
}

impl<T: Scalar> Var<T> {
    /// A leaf that takes part in differentiation.
    pub fn param(value: Tensor<T>) -> Self {
        Self::leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node { id: NEXT_ID.fetch_add(1, Ordering::Relaxed), value, requires_grad, op: None }))
    }

    fn from_op(value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op: requires_grad.then_some(op),
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Var::constant(self.0.value.clone())
    }

    pub fn conv2d(&self, w: &Var<T>, b: Option<&Var<T>>, mode: PadMode) -> Self {
        let value = kernels::conv2d(self.value(), w.value(), b.map(|b| b.value()), mode);
        let rg = self.requires_grad() || w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        Var::from_op(value, rg, Op::Conv2d { x: self.clone(), w: w.clone(), b: b.cloned(), mode })
    }

    pub fn depthwise3x3(&self, w: &Var<T>, b: &Var<T>, mode: PadMode) -> Self {
        let value = kernels::depthwise3x3(self.value(), w.value(), b.value(), mode);
        let rg = self.requires_grad() || w.requires_grad() || b.requires_grad();
        Var::from_op(value, rg, Op::Depthwise { x: self.clone(), w: w.clone(), b: b.clone(), mode })
    }

    pub fn layer_norm_channels(&self, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Self {
        let (value, xhat, rstd) = kernels::layer_norm_channels(self.value(), gamma.value(), beta.value(), T::of(eps));
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let op = Op::LayerNorm { x: self.clone(), gamma: gamma.clone(), beta: beta.clone(), xhat, rstd };
        Var::from_op(value, rg, op)
    }

    /// Splits the channels into two halves and multiplies them.
    pub fn simple_gate(&self) -> Self {
        let s = self.shape();
        assert!(s.c % 2 == 0, "simple gate needs an even channel count");
        let half = s.c / 2;
        let mut out = Tensor::zeros(s.with_c(half));
        for n in 0..s.n {
            let src = self.value().sample(n);
            let (a, b) = src.split_at(half * s.plane());
            for ((o, &x), &y) in out.sample_mut(n).iter_mut().zip(a).zip(b) {
                *o = x * y;
            }
        }
        Var::from_op(out, self.requires_grad(), Op::SimpleGate { x: self.clone() })
    }

    pub fn global_avg_pool(&self) -> Self {
        let s = self.shape();
        let inv = T::one() / T::of(s.plane() as f64);
        let mut out = Tensor::zeros(Shape::new(s.n, s.c, 1, 1));
        for n in 0..s.n {
            for c in 0..s.c {
                out.data_mut()[n * s.c + c] = self.value().plane(n, c).iter().copied().sum::<T>() * inv;
            }
        }
        Var::from_op(out, self.requires_grad(), Op::GlobalAvgPool { x: self.clone() })
    }

    /// Multiplies every plane by a per-sample, per-channel factor `s: [n, c, 1, 1]`.
    pub fn mul_channel(&self, s: &Var<T>) -> Self {
        let sh = self.shape();
        assert_eq!(s.shape(), Shape::new(sh.n, sh.c, 1, 1));
        let mut out = self.value().clone();
        for n in 0..sh.n {
            for c in 0..sh.c {
                let k = s.value().data()[n * sh.c + c];
                out.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
            }
        }
        let rg = self.requires_grad() || s.requires_grad();
        Var::from_op(out, rg, Op::MulChannel { x: self.clone(), s: s.clone() })
    }

    /// Multiplies by a one-element variable.
    pub fn mul_scalar(&self, s: &Var<T>) -> Self {
        assert_eq!(s.value().len(), 1);
        let k = s.value().item();
        let out = self.value().map(|v| v * k);
        let rg = self.requires_grad() || s.requires_grad();
        Var::from_op(out, rg, Op::MulScalar { x: self.clone(), s: s.clone() })
    }

    /// `x + alpha * plane`, with the one-channel `plane` broadcast over channels.
    pub fn add_scaled_plane(&self, plane: Tensor<T>, alpha: &Var<T>) -> Self {
        let s = self.shape();
        assert_eq!(plane.shape(), Shape::new(s.n, 1, s.h, s.w));
        let a = alpha.value().item();
        let mut out = self.value().clone();
        for n in 0..s.n {
            let p = plane.plane(n, 0);
            for c in 0..s.c {
                for (o, &e) in out.plane_mut(n, c).iter_mut().zip(p) {
                    *o += a * e;
                }
            }
        }
        let rg = self.requires_grad() || alpha.requires_grad();
        Var::from_op(out, rg, Op::AddScaledPlane { x: self.clone(), plane, alpha: alpha.clone() })
    }

    pub fn add(&self, other: &Var<T>) -> Self {
        assert_eq!(self.shape(), other.shape());
        let out = self.value().zip_map(other.value(), |a, b| a + b);
        let rg = self.requires_grad() || other.requires_grad();
        Var::from_op(out, rg, Op::Add { a: self.clone(), b: other.clone() })
    }

    pub fn sub(&self, other: &Var<T>) -> Self {
        assert_eq!(self.shape(), other.shape());
        let out = self.value().zip_map(other.value(), |a, b| a - b);
        let rg = self.requires_grad() || other.requires_grad();
        Var::from_op(out, rg, Op::Sub { a: self.clone(), b: other.clone() })
    }

    pub fn scale(&self, k: f64) -> Self {
        let k = T::of(k);
        Var::from_op(self.value().map(|v| v * k), self.requires_grad(), Op::Scale { x: self.clone(), k })
    }

    /// `x * scale[c] + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&self, scale: &[f64], shift: &[f64]) -> Self {
        let s = self.shape();
        assert!(scale.len() == s.c && shift.len() == s.c);
        let scale: Vec<T> = scale.iter().map(|&v| T::of(v)).collect();
        let mut out = self.value().clone();
        for n in 0..s.n {
            for c in 0..s.c {
                let (a, b) = (scale[c], T::of(shift[c]));
                out.plane_mut(n, c).iter_mut().for_each(|v| *v = *v * a + b);
            }
        }
        Var::from_op(out, self.requires_grad(), Op::ChannelAffine { x: self.clone(), scale })
    }

    /// Adds a constant to every element.
    pub fn add_const(&self, k: f64) -> Self {
        let s = self.shape();
        self.channel_affine(&vec![1.0; s.c], &vec![k; s.c])
    }

    pub fn square(&self) -> Self {
        Var::from_op(self.value().map(|v| v * v), self.requires_grad(), Op::Square { x: self.clone() })
    }

    /// Mean over every element, as a one-element variable.
    pub fn mean(&self) -> Self {
        Var::from_op(Tensor::scalar(self.value().mean()), self.requires_grad(), Op::Mean { x: self.clone() })
    }

    /// Mean squared difference.
    pub fn mse(&self, other: &Var<T>) -> Self {
        self.sub(other).square().mean()
    }

    pub fn concat_channels(parts: &[&Var<T>]) -> Self {
        let first = parts[0].shape();
        let c: usize = parts.iter().map(|p| p.shape().c).sum();
        for p in parts {
            let s = p.shape();
            assert!(s.n == first.n && s.h == first.h && s.w == first.w, "concat shape mismatch");
        }
        let mut out = Tensor::zeros(first.with_c(c));
        for n in 0..first.n {
            let mut off = 0;
            let dst = out.sample_mut(n);
            for p in parts {
                let src = p.value().sample(n);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Var::from_op(out, rg, Op::Concat { parts: parts.iter().map(|&p| p.clone()).collect() })
    }

    pub fn select_channels(&self, idx: &[usize]) -> Self {
        let s = self.shape();
        let mut out = Tensor::zeros(s.with_c(idx.len()));
        for n in 0..s.n {
            for (k, &c) in idx.iter().enumerate() {
                out.plane_mut(n, k).copy_from_slice(self.value().plane(n, c));
            }
        }
        Var::from_op(out, self.requires_grad(), Op::SelectChannels { x: self.clone(), idx: idx.to_vec() })
    }

    pub fn leaky_relu(&self, slope: f64) -> Self {
        let slope = T::of(slope);
        let out = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        Var::from_op(out, self.requires_grad(), Op::LeakyRelu { x: self.clone(), slope })
    }

    pub fn relu(&self) -> Self {
        self.leaky_relu(0.0)
    }

    pub fn avg_pool2(&self) -> Self {
        Var::from_op(kernels::avg_pool2(self.value()), self.requires_grad(), Op::AvgPool2 { x: self.clone() })
    }

    pub fn max_pool2(&self) -> Self {
        let (out, argmax) = kernels::max_pool2(self.value());
        Var::from_op(out, self.requires_grad(), Op::MaxPool2 { x: self.clone(), argmax })
    }

    /// Per-sample Gram matrix `F F^T / (C H W)`, shaped `[n, 1, c, c]`.
    pub fn gram(&self) -> Self {
        let s = self.shape();
        let norm = T::one() / T::of((s.c * s.plane()) as f64);
        let mut out = Tensor::zeros(Shape::new(s.n, 1, s.c, s.c));
        for n in 0..s.n {
            let f = self.value().sample(n);
            let g = out.sample_mut(n);
            matmul(false, true, s.c, s.plane(), s.c, f, f, g, false);
            g.iter_mut().for_each(|v| *v *= norm);
        }
        Var::from_op(out, self.requires_grad(), Op::Gram { x: self.clone() })
    }

    /// Appends one channel holding the batch standard deviation averaged over
    /// all features.
    pub fn minibatch_std(&self, eps: f64) -> Self {
        let s = self.shape();
        let per = s.c * s.plane();
        let inv_n = T::one() / T::of(s.n as f64);
        let mut centered = self.value().clone();
        let mut std = Tensor::zeros(Shape::new(1, 1, 1, per));
        for i in 0..per {
            let mean = (0..s.n).map(|n| self.value().sample(n)[i]).sum::<T>() * inv_n;
            let mut var = T::zero();
            for n in 0..s.n {
                let d = self.value().sample(n)[i] - mean;
                centered.sample_mut(n)[i] = d;
                var += d * d;
            }
            std.data_mut()[i] = (var * inv_n + T::of(eps)).sqrt();
        }
        let avg = std.mean();
        let mut out = Tensor::zeros(s.with_c(s.c + 1));
        for n in 0..s.n {
            let dst = out.sample_mut(n);
            dst[..per].copy_from_slice(self.value().sample(n));
            dst[per..].fill(avg);
        }
        Var::from_op(out, self.requires_grad(), Op::MinibatchStd { x: self.clone(), centered, std })
    }
}

impl<T: Scalar> Op<T> {
    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                if let Some(b) = b {
                    v.push(b);
                }
                v
            }
            Op::Depthwise { x, w, b, .. } => vec![x, w, b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::MulChannel { x, s } | Op::MulScalar { x, s } => vec![x, s],
            Op::AddScaledPlane { x, alpha, .. } => vec![x, alpha],
            Op::Add { a, b } | Op::Sub { a, b } => vec![a, b],
            Op::Concat { parts } => parts.iter().collect(),
            Op::SimpleGate { x }
            | Op::GlobalAvgPool { x }
            | Op::Scale { x, .. }
            | Op::ChannelAffine { x, .. }
            | Op::Square { x }
            | Op::Mean { x }
            | Op::SelectChannels { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::AvgPool2 { x }
            | Op::MaxPool2 { x, .. }
            | Op::Gram { x }
            | Op::MinibatchStd { x, .. } => vec![x],
        }
    }

    /// Gradients for the parents that require them.
    fn backward(&self, g: &Tensor<T>) -> Vec<(Var<T>, Tensor<T>)> {
        let mut out = Vec::new();
        let mut push = |v: &Var<T>, t: Tensor<T>| {
            if v.requires_grad() {
                out.push((v.clone(), t));
            }
        };
        match self {
            Op::Conv2d { x, w, b, mode } => {
                let grads = kernels::conv2d_backward(
                    x.value(),
                    w.value(),
                    g,
                    *mode,
                    x.requires_grad(),
                    w.requires_grad(),
                    b.as_ref().is_some_and(|b| b.requires_grad()),
                );
                if let Some(dx) = grads.dx {
                    push(x, dx);
                }
                if let Some(dw) = grads.dw {
                    push(w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    push(b, reshape_like(db, b));
                }
            }
            Op::Depthwise { x, w, b, mode } => {
                let grads = kernels::depthwise3x3_backward(
                    x.value(),
                    w.value(),
                    g,
                    *mode,
                    x.requires_grad(),
                    w.requires_grad(),
                    b.requires_grad(),
                );
                if let Some(dx) = grads.dx {
                    push(x, dx);
                }
                if let Some(dw) = grads.dw {
                    push(w, dw);
                }
                if let Some(db) = grads.db {
                    push(b, reshape_like(db, b));
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (dx, dg, db) = kernels::layer_norm_channels_backward(xhat, rstd, gamma.value(), g);
                push(x, dx);
                push(gamma, reshape_like(dg, gamma));
                push(beta, reshape_like(db, beta));
            }
            Op::SimpleGate { x } => {
                let s = x.shape();
                let half = s.c / 2;
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    let src = x.value().sample(n);
                    let (a, b) = src.split_at(half * s.plane());
                    let gs = g.sample(n);
                    let (da, db) = dx.sample_mut(n).split_at_mut(half * s.plane());
                    for i in 0..gs.len() {
                        da[i] = gs[i] * b[i];
                        db[i] = gs[i] * a[i];
                    }
                }
                push(x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let s = x.shape();
                let inv = T::one() / T::of(s.plane() as f64);
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let v = g.data()[n * s.c + c] * inv;
                        dx.plane_mut(n, c).fill(v);
                    }
                }
                push(x, dx);
            }
            Op::MulChannel { x, s: sv } => {
                let s = x.shape();
                if x.requires_grad() {
                    let mut dx = g.clone();
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let k = sv.value().data()[n * s.c + c];
                            dx.plane_mut(n, c).iter_mut().for_each(|v| *v *= k);
                        }
                    }
                    push(x, dx);
                }
                if sv.requires_grad() {
                    let mut ds = Tensor::zeros(sv.shape());
                    for n in 0..s.n {
                        for c in 0..s.c {
                            ds.data_mut()[n * s.c + c] =
                                g.plane(n, c).iter().zip(x.value().plane(n, c)).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    push(sv, ds);
                }
            }
            Op::MulScalar { x, s } => {
                if x.requires_grad() {
                    let k = s.value().item();
                    push(x, g.map(|v| v * k));
                }
                if s.requires_grad() {
                    let d: T = g.data().iter().zip(x.value().data()).map(|(&a, &b)| a * b).sum();
                    push(s, Tensor::full(s.shape(), d));
                }
            }
            Op::AddScaledPlane { x, plane, alpha } => {
                if x.requires_grad() {
                    push(x, g.clone());
                }
                if alpha.requires_grad() {
                    let s = x.shape();
                    let mut d = T::zero();
                    for n in 0..s.n {
                        let p = plane.plane(n, 0);
                        for c in 0..s.c {
                            d += g.plane(n, c).iter().zip(p).map(|(&a, &b)| a * b).sum::<T>();
                        }
                    }
                    push(alpha, Tensor::full(alpha.shape(), d));
                }
            }
            Op::Add { a, b } => {
                if a.requires_grad() {
                    push(a, g.clone());
                }
                if b.requires_grad() {
                    push(b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if a.requires_grad() {
                    push(a, g.clone());
                }
                if b.requires_grad() {
                    push(b, g.map(|v| -v));
                }
            }
            Op::Scale { x, k } => push(x, g.map(|v| v * *k)),
            Op::ChannelAffine { x, scale } => {
                let s = x.shape();
                let mut dx = g.clone();
                for n in 0..s.n {
                    for (c, &a) in scale.iter().enumerate() {
                        dx.plane_mut(n, c).iter_mut().for_each(|v| *v *= a);
                    }
                }
                push(x, dx);
            }
            Op::Square { x } => {
                let two = T::of(2.0);
                push(x, g.zip_map(x.value(), |gv, xv| two * gv * xv));
            }
            Op::Mean { x } => {
                let v = g.item() / T::of(x.value().len() as f64);
                push(x, Tensor::full(x.shape(), v));
            }
            Op::Concat { parts } => {
                let mut off = 0;
                for p in parts {
                    let s = p.shape();
                    let per = s.c * s.plane();
                    if p.requires_grad() {
                        let mut d = Tensor::zeros(s);
                        for n in 0..s.n {
                            d.sample_mut(n).copy_from_slice(&g.sample(n)[off..off + per]);
                        }
                        push(p, d);
                    }
                    off += per;
                }
            }
            Op::SelectChannels { x, idx } => {
                let s = x.shape();
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    for (k, &c) in idx.iter().enumerate() {
                        for (d, &v) in dx.plane_mut(n, c).iter_mut().zip(g.plane(n, k)) {
                            *d += v;
                        }
                    }
                }
                push(x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                push(x, g.zip_map(x.value(), |gv, xv| if xv > T::zero() { gv } else { gv * *slope }));
            }
            Op::AvgPool2 { x } => push(x, kernels::avg_pool2_backward(x.shape(), g)),
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(x.shape());
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
                push(x, dx);
            }
            Op::Gram { x } => {
                let s = x.shape();
                let norm = T::one() / T::of((s.c * s.plane()) as f64);
                let mut dx = Tensor::zeros(s);
                let mut sym = vec![T::zero(); s.c * s.c];
                for n in 0..s.n {
                    let gm = g.sample(n);
                    for i in 0..s.c {
                        for j in 0..s.c {
                            sym[i * s.c + j] = (gm[i * s.c + j] + gm[j * s.c + i]) * norm;
                        }
                    }
                    matmul(false, false, s.c, s.c, s.plane(), &sym, x.value().sample(n), dx.sample_mut(n), false);
                }
                push(x, dx);
            }
            Op::MinibatchStd { x, centered, std } => {
                let s = x.shape();
                let per = s.c * s.plane();
                let inv_n = T::one() / T::of(s.n as f64);
                // gradient reaching the shared scalar through every broadcast copy
                let gavg: T = (0..s.n).map(|n| g.sample(n)[per..].iter().copied().sum::<T>()).sum();
                let gstd = gavg / T::of(per as f64);
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    let gs = &g.sample(n)[..per];
                    let d = dx.sample_mut(n);
                    for i in 0..per {
                        d[i] = gs[i] + gstd * centered.sample(n)[i] * inv_n / std.data()[i];
                    }
                }
                push(x, dx);
            }
        }
        out
    }
}

fn reshape_like<T: Scalar>(t: Tensor<T>, like: &Var<T>) -> Tensor<T> {
    t.reshape(like.shape()).expect("gradient has parameter size")
}

/// Gradients of a scalar with respect to every leaf that requires one.
pub struct Grads<T: Scalar> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.id())
    }
}

/// Back-propagates from a one-element `root`.
pub fn backward<T: Scalar>(root: &Var<T>) -> Grads<T> {
    assert_eq!(root.value().len(), 1, "backward needs a scalar root");
    let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
    if !root.requires_grad() {
        return Grads { grads };
    }
    // iterative post-order DFS gives a topological order
    let mut order: Vec<Var<T>> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Var<T>, bool)> = vec![(root.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        if expanded {
            order.push(v);
            continue;
        }
        if !seen.insert(v.id()) {
            continue;
        }
        stack.push((v.clone(), true));
        if let Some(op) = &v.0.op {
            for p in op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    grads.insert(root.id(), Tensor::full(root.shape(), T::one()));
    for v in order.iter().rev() {
        let Some(op) = &v.0.op else { continue };
        let Some(g) = grads.remove(&v.id()) else { continue };
        for (p, dp) in op.backward(&g) {
            match grads.get_mut(&p.id()) {
                Some(acc) => acc.add_assign(&dp),
                None => {
                    grads.insert(p.id(), dp);
                }
            }
        }
    }
    Grads { grads }
}
