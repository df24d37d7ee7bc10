//! Forward and backward kernels for the layers used by the networks.
//!
//! All kernels work on contiguous NCHW buffers, stride 1, "same" padding.

use serde::{Deserialize, Serialize};

use crate::tensor::{matmul, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PadMode {
    /// Mirror without repeating the edge sample.
    Reflect,
    Zero,
}

const OUTSIDE: usize = usize::MAX;

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    // one bounce is enough while the pad is smaller than the axis
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i.clamp(0, n - 1) as usize
}

/// For each kernel tap, the source index of every output position along one
/// axis (or `OUTSIDE` for zero padding).
fn axis_map(len: usize, k: usize, mode: PadMode) -> Vec<usize> {
    let p = (k / 2) as isize;
    let mut map = vec![0; k * len];
    for t in 0..k {
        for i in 0..len {
            let s = i as isize + t as isize - p;
            map[t * len + i] = if s >= 0 && s < len as isize {
                s as usize
            } else {
                match mode {
                    PadMode::Reflect => reflect(s, len),
                    PadMode::Zero => OUTSIDE,
                }
            };
        }
    }
    map
}

/// Unfolds one image `[c, h, w]` into columns `[c*k*k, h*w]`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize, mode: PadMode, col: &mut [T]) {
    let rows = axis_map(h, k, mode);
    let cols = axis_map(w, k, mode);
    let p = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let dst_plane = &mut col[r * hw..(r + 1) * hw];
                let off = kx as isize - p;
                let lo = (-off).max(0) as usize;
                let hi = (w as isize - off.max(0)).max(lo as isize) as usize;
                let cmap = &cols[kx * w..(kx + 1) * w];
                for y in 0..h {
                    let dst = &mut dst_plane[y * w..(y + 1) * w];
                    let sy = rows[ky * h + y];
                    if sy == OUTSIDE {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy * w..(sy + 1) * w];
                    if hi > lo {
                        let s0 = (lo as isize + off) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                    for xi in (0..lo).chain(hi..w) {
                        let sx = cmap[xi];
                        dst[xi] = if sx == OUTSIDE { T::zero() } else { src[sx] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, mode: PadMode, dx: &mut [T]) {
    let rows = axis_map(h, k, mode);
    let cols = axis_map(w, k, mode);
    let p = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ci * k + ky) * k + kx;
                let src_plane = &col[r * hw..(r + 1) * hw];
                let off = kx as isize - p;
                let lo = (-off).max(0) as usize;
                let hi = (w as isize - off.max(0)).max(lo as isize) as usize;
                let cmap = &cols[kx * w..(kx + 1) * w];
                for y in 0..h {
                    let sy = rows[ky * h + y];
                    if sy == OUTSIDE {
                        continue;
                    }
                    let src = &src_plane[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    if hi > lo {
                        let s0 = (lo as isize + off) as usize;
                        for (d, &g) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]) {
                            *d += g;
                        }
                    }
                    for xi in (0..lo).chain(hi..w) {
                        let sx = cmap[xi];
                        if sx != OUTSIDE {
                            dst[sx] += src[xi];
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution. `weight` is `[cout, cin, k, k]`, `bias` has `cout` entries.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, mode: PadMode) -> Tensor<T> {
    let s = x.shape();
    let ws = weight.shape();
    assert_eq!(ws.c, s.c, "conv input channels");
    assert_eq!(ws.h, ws.w, "square kernels only");
    let (cout, k, hw) = (ws.n, ws.h, s.plane());
    let ck = s.c * k * k;
    let mut y = Tensor::zeros(Shape::new(s.n, cout, s.h, s.w));
    let mut col = if k == 1 { Vec::new() } else { vec![T::zero(); ck * hw] };
    for n in 0..s.n {
        let xin = x.sample(n);
        let src: &[T] = if k == 1 {
            xin
        } else {
            im2col(xin, s.c, s.h, s.w, k, mode, &mut col);
            &col
        };
        let out = y.sample_mut(n);
        if let Some(b) = bias {
            for (co, plane) in out.chunks_mut(hw).enumerate() {
                plane.fill(b.data()[co]);
            }
        }
        matmul(false, false, cout, ck, hw, weight.data(), src, out, bias.is_some());
    }
    y
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    mode: PadMode,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let ws = weight.shape();
    let (cout, k, hw) = (ws.n, ws.h, s.plane());
    let ck = s.c * k * k;
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut dw = need_dw.then(|| Tensor::zeros(ws));
    let mut db = need_db.then(|| Tensor::zeros(Shape::new(1, 1, 1, cout)));
    let mut col = if k == 1 || !need_dw { Vec::new() } else { vec![T::zero(); ck * hw] };
    let mut dcol = if k == 1 || !need_dx { Vec::new() } else { vec![T::zero(); ck * hw] };
    for n in 0..s.n {
        let g = dy.sample(n);
        if let Some(db) = db.as_mut() {
            for (co, plane) in g.chunks(hw).enumerate() {
                db.data_mut()[co] += plane.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let src: &[T] = if k == 1 {
                x.sample(n)
            } else {
                im2col(x.sample(n), s.c, s.h, s.w, k, mode, &mut col);
                &col
            };
            matmul(false, true, cout, hw, ck, g, src, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            if k == 1 {
                matmul(true, false, ck, cout, hw, weight.data(), g, dx.sample_mut(n), false);
            } else {
                matmul(true, false, ck, cout, hw, weight.data(), g, &mut dcol, false);
                col2im(&dcol, s.c, s.h, s.w, k, mode, dx.sample_mut(n));
            }
        }
    }
    ConvGrads { dx, dw, db }
}

fn pad_plane<T: Scalar>(src: &[T], h: usize, w: usize, mode: PadMode, out: &mut [T]) {
    let (ph, pw) = (h + 2, w + 2);
    for py in 0..ph {
        let sy = py as isize - 1;
        let row = &mut out[py * pw..(py + 1) * pw];
        let sy = if sy >= 0 && sy < h as isize {
            sy as usize
        } else if mode == PadMode::Reflect {
            reflect(sy, h)
        } else {
            row.fill(T::zero());
            continue;
        };
        let srow = &src[sy * w..(sy + 1) * w];
        row[1..w + 1].copy_from_slice(srow);
        match mode {
            PadMode::Reflect => {
                row[0] = srow[reflect(-1, w)];
                row[w + 1] = srow[reflect(w as isize, w)];
            }
            PadMode::Zero => {
                row[0] = T::zero();
                row[w + 1] = T::zero();
            }
        }
    }
}

fn unpad_plane_accumulate<T: Scalar>(dpad: &[T], h: usize, w: usize, mode: PadMode, dst: &mut [T]) {
    let pw = w + 2;
    for py in 0..h + 2 {
        let sy = py as isize - 1;
        let sy = if sy >= 0 && sy < h as isize {
            sy as usize
        } else if mode == PadMode::Reflect {
            reflect(sy, h)
        } else {
            continue;
        };
        let grow = &dpad[py * pw..(py + 1) * pw];
        let drow = &mut dst[sy * w..(sy + 1) * w];
        for (d, &g) in drow.iter_mut().zip(&grow[1..w + 1]) {
            *d += g;
        }
        if mode == PadMode::Reflect {
            drow[reflect(-1, w)] += grow[0];
            drow[reflect(w as isize, w)] += grow[w + 1];
        }
    }
}

/// Per-channel 3x3 convolution. `weight` is `[c, 1, 3, 3]`, `bias` has `c` entries.
pub fn depthwise3x3<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, mode: PadMode) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let pw = w + 2;
    let mut pad = vec![T::zero(); (h + 2) * pw];
    let mut y = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            pad_plane(x.plane(n, c), h, w, mode, &mut pad);
            let k = &weight.data()[c * 9..c * 9 + 9];
            let out = y.plane_mut(n, c);
            out.fill(bias.data()[c]);
            for yy in 0..h {
                let orow = &mut out[yy * w..(yy + 1) * w];
                for ky in 0..3 {
                    let prow = &pad[(yy + ky) * pw..(yy + ky + 1) * pw];
                    for kx in 0..3 {
                        let kv = k[ky * 3 + kx];
                        for (o, &v) in orow.iter_mut().zip(&prow[kx..kx + w]) {
                            *o += kv * v;
                        }
                    }
                }
            }
        }
    }
    y
}

pub fn depthwise3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    mode: PadMode,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let pw = w + 2;
    let mut pad = vec![T::zero(); (h + 2) * pw];
    let mut dpad = vec![T::zero(); (h + 2) * pw];
    let mut dx = need_dx.then(|| Tensor::zeros(s));
    let mut dw = need_dw.then(|| Tensor::zeros(weight.shape()));
    let mut db = need_db.then(|| Tensor::zeros(Shape::new(1, 1, 1, s.c)));
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            if let Some(db) = db.as_mut() {
                db.data_mut()[c] += g.iter().copied().sum::<T>();
            }
            if let Some(dw) = dw.as_mut() {
                pad_plane(x.plane(n, c), h, w, mode, &mut pad);
                let dk = &mut dw.data_mut()[c * 9..c * 9 + 9];
                for yy in 0..h {
                    let grow = &g[yy * w..(yy + 1) * w];
                    for ky in 0..3 {
                        let prow = &pad[(yy + ky) * pw..(yy + ky + 1) * pw];
                        for kx in 0..3 {
                            let acc: T = grow.iter().zip(&prow[kx..kx + w]).map(|(&a, &b)| a * b).sum();
                            dk[ky * 3 + kx] += acc;
                        }
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                dpad.fill(T::zero());
                let k = &weight.data()[c * 9..c * 9 + 9];
                for yy in 0..h {
                    let grow = &g[yy * w..(yy + 1) * w];
                    for ky in 0..3 {
                        let prow = &mut dpad[(yy + ky) * pw..(yy + ky + 1) * pw];
                        for kx in 0..3 {
                            let kv = k[ky * 3 + kx];
                            for (d, &gv) in prow[kx..kx + w].iter_mut().zip(grow) {
                                *d += kv * gv;
                            }
                        }
                    }
                }
                unpad_plane_accumulate(&dpad, h, w, mode, dx.plane_mut(n, c));
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Layer normalization across channels at every pixel.
///
/// Returns the output, the normalized input and the per-pixel reciprocal
/// standard deviation (both needed for the backward pass).
pub fn layer_norm_channels<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let s = x.shape();
    let hw = s.plane();
    let inv_c = T::one() / T::of(s.c as f64);
    let mut y = Tensor::zeros(s);
    let mut xhat = Tensor::zeros(s);
    let mut rstd = vec![T::zero(); s.n * hw];
    let mut mean = vec![T::zero(); hw];
    let mut var = vec![T::zero(); hw];
    for n in 0..s.n {
        mean.fill(T::zero());
        var.fill(T::zero());
        for c in 0..s.c {
            for (m, &v) in mean.iter_mut().zip(x.plane(n, c)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        for c in 0..s.c {
            for ((vv, &m), &v) in var.iter_mut().zip(&mean).zip(x.plane(n, c)) {
                let d = v - m;
                *vv += d * d;
            }
        }
        let r = &mut rstd[n * hw..(n + 1) * hw];
        for (ri, &vv) in r.iter_mut().zip(&var) {
            *ri = T::one() / (vv * inv_c + eps).sqrt();
        }
        for c in 0..s.c {
            let (g, b) = (gamma.data()[c], beta.data()[c]);
            let xs = x.plane(n, c);
            let xh = xhat.plane_mut(n, c);
            let out = y.plane_mut(n, c);
            for i in 0..hw {
                let v = (xs[i] - mean[i]) * r[i];
                xh[i] = v;
                out[i] = g * v + b;
            }
        }
    }
    (y, xhat, rstd)
}

pub fn layer_norm_channels_backward<T: Scalar>(
    xhat: &Tensor<T>,
    rstd: &[T],
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = xhat.shape();
    let hw = s.plane();
    let inv_c = T::one() / T::of(s.c as f64);
    let mut dx = Tensor::zeros(s);
    let mut dgamma = Tensor::zeros(Shape::new(1, 1, 1, s.c));
    let mut dbeta = Tensor::zeros(Shape::new(1, 1, 1, s.c));
    let mut sum_g = vec![T::zero(); hw];
    let mut sum_gx = vec![T::zero(); hw];
    for n in 0..s.n {
        sum_g.fill(T::zero());
        sum_gx.fill(T::zero());
        for c in 0..s.c {
            let g = gamma.data()[c];
            let (dyp, xh) = (dy.plane(n, c), xhat.plane(n, c));
            let mut dg = T::zero();
            let mut dbv = T::zero();
            for i in 0..hw {
                dg += dyp[i] * xh[i];
                dbv += dyp[i];
                let gx = dyp[i] * g;
                sum_g[i] += gx;
                sum_gx[i] += gx * xh[i];
            }
            dgamma.data_mut()[c] += dg;
            dbeta.data_mut()[c] += dbv;
        }
        let r = &rstd[n * hw..(n + 1) * hw];
        for c in 0..s.c {
            let g = gamma.data()[c];
            let dyp = dy.plane(n, c).to_vec();
            let xh = xhat.plane(n, c).to_vec();
            let out = dx.plane_mut(n, c);
            for i in 0..hw {
                out[i] = r[i] * (dyp[i] * g - inv_c * sum_g[i] - xh[i] * inv_c * sum_gx[i]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let quarter = T::of(0.25);
    let mut y = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for yy in 0..oh {
                for xx in 0..ow {
                    let i = 2 * yy * s.w + 2 * xx;
                    dst[yy * ow + xx] = quarter * (src[i] + src[i + 1] + src[i + s.w] + src[i + s.w + 1]);
                }
            }
        }
    }
    y
}

pub fn avg_pool2_backward<T: Scalar>(in_shape: Shape, dy: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (in_shape.h / 2, in_shape.w / 2);
    let quarter = T::of(0.25);
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..in_shape.n {
        for c in 0..in_shape.c {
            let g = dy.plane(n, c).to_vec();
            let dst = dx.plane_mut(n, c);
            for yy in 0..oh {
                for xx in 0..ow {
                    let v = quarter * g[yy * ow + xx];
                    let i = 2 * yy * in_shape.w + 2 * xx;
                    dst[i] += v;
                    dst[i + 1] += v;
                    dst[i + in_shape.w] += v;
                    dst[i + in_shape.w + 1] += v;
                }
            }
        }
    }
    dx
}

/// 2x2 max pooling; also returns the flat input index of every maximum.
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut y = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut arg = Vec::with_capacity(y.len());
    let out = y.data_mut();
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            let src = x.plane(n, c);
            for yy in 0..oh {
                for xx in 0..ow {
                    let i = 2 * yy * s.w + 2 * xx;
                    let mut best = i;
                    for j in [i + 1, i + s.w, i + s.w + 1] {
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    out[o] = src[best];
                    arg.push(base + best);
                    o += 1;
                }
            }
        }
    }
    (y, arg)
}
