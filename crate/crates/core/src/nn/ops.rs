//! Differentiable operations: convolution, activations, pooling, resampling,
//! channel concat, dense projection, and the training losses.
//!
//! Every forward has an exact hand-written backward. Each output element is
//! accumulated by a single worker in a fixed order, so results are bitwise
//! reproducible at any thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;

use super::tensor::Tensor;

/// 3x3 (or any odd k) convolution with stride 1 and same padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// Weights `(c_out, c_in, k, k)`.
    pub w: Tensor,
    pub b: Vec<f64>,
}

/// Parameter gradients of one convolution.
#[derive(Debug, Clone)]
pub struct Conv2dGrad {
    pub gw: Tensor,
    pub gb: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd for same padding");
        Self { w: Tensor::zeros(c_out, c_in, k, k), b: vec![0.0; c_out] }
    }

    /// He-uniform weights, zero bias.
    pub fn init_he(c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut conv = Self::zeros(c_in, c_out, k);
        let limit = (6.0 / (c_in * k * k) as f64).sqrt();
        for v in &mut conv.w.data {
            *v = rng.random_range(-limit..limit);
        }
        conv
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.w.c {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.w.c, x.c
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (h, w) = (x.h, x.w);
        let k = self.w.h;
        let pad = k / 2;
        let c_out = self.w.n;
        let mut out = Tensor::zeros(x.n, c_out, h, w);
        let hw = h * w;
        par::for_each_chunk_mut(&mut out.data, hw, |plane, o| {
            let n = plane / c_out;
            let co = plane % c_out;
            o.fill(self.b[co]);
            for ci in 0..x.c {
                let xin = x.plane(n, ci);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w.at(co, ci, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        axpy_shift(o, xin, wv, h, w, ky as isize - pad as isize, kx as isize - pad as isize);
                    }
                }
            }
        });
        out.debug_assert_finite("conv2d forward");
        Ok(out)
    }

    /// Gradients w.r.t. input, weights, and bias.
    pub fn backward(&self, x: &Tensor, gy: &Tensor) -> Result<(Tensor, Conv2dGrad)> {
        self.check_input(x)?;
        if gy.n != x.n || gy.c != self.w.n || gy.h != x.h || gy.w != x.w {
            return Err(Error::ShapeMismatch("conv backward output grad shape".into()));
        }
        let (h, w) = (x.h, x.w);
        let k = self.w.h;
        let pad = k / 2;
        let c_out = self.w.n;
        let c_in = x.c;
        let hw = h * w;

        let mut gx = Tensor::zeros(x.n, c_in, h, w);
        par::for_each_chunk_mut(&mut gx.data, hw, |plane, o| {
            let n = plane / c_in;
            let ci = plane % c_in;
            for co in 0..c_out {
                let g = gy.plane(n, co);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.w.at(co, ci, ky, kx);
                        if wv == 0.0 {
                            continue;
                        }
                        // x contributed to y at offset +(ky-p, kx-p); route back.
                        axpy_shift(o, g, wv, h, w, pad as isize - ky as isize, pad as isize - kx as isize);
                    }
                }
            }
        });

        let mut gw = Tensor::zeros(c_out, c_in, k, k);
        let kk = c_in * k * k;
        par::for_each_chunk_mut(&mut gw.data, kk, |co, gwslice| {
            for n in 0..x.n {
                let g = gy.plane(n, co);
                for ci in 0..c_in {
                    let xin = x.plane(n, ci);
                    for ky in 0..k {
                        for kx in 0..k {
                            let dy = ky as isize - pad as isize;
                            let dx = kx as isize - pad as isize;
                            gwslice[(ci * k + ky) * k + kx] += dot_shift(g, xin, h, w, dy, dx);
                        }
                    }
                }
            }
        });

        let gb: Vec<f64> = (0..c_out)
            .map(|co| (0..x.n).map(|n| gy.plane(n, co).iter().sum::<f64>()).sum())
            .collect();

        gx.debug_assert_finite("conv2d backward");
        Ok((gx, Conv2dGrad { gw, gb }))
    }
}

/// `out[y][x] += a * src[y+dy][x+dx]` over the in-bounds region.
#[inline]
fn axpy_shift(out: &mut [f64], src: &[f64], a: f64, h: usize, w: usize, dy: isize, dx: isize) {
    let y0 = 0.max(-dy) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = 0.max(-dx) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let src_y = (y as isize + dy) as usize;
        let o = &mut out[y * w + x0..y * w + x1];
        let s = &src[src_y * w + (x0 as isize + dx) as usize..];
        for (ov, sv) in o.iter_mut().zip(s) {
            *ov += a * sv;
        }
    }
}

/// `Σ_{y,x} a[y][x] * b[y+dy][x+dx]` over the in-bounds region.
#[inline]
fn dot_shift(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = 0.max(-dy) as usize;
    let y1 = (h as isize).min(h as isize - dy) as usize;
    let x0 = 0.max(-dx) as usize;
    let x1 = (w as isize).min(w as isize - dx) as usize;
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let by = (y as isize + dy) as usize;
        let av = &a[y * w + x0..y * w + x1];
        let bv = &b[by * w + (x0 as isize + dx) as usize..];
        let mut row = 0.0;
        for (x, y) in av.iter().zip(bv) {
            row += x * y;
        }
        acc += row;
    }
    acc
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Subgradient 0 at exactly 0, matching the forward's `max(0, x)`.
pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    debug_assert!(x.same_shape(gy));
    let mut gx = gy.clone();
    for (g, &v) in gx.data.iter_mut().zip(&x.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// 2x2 max pooling; requires even H and W. Returns the pooled tensor and the
/// per-output argmax (0..3, row-major in the window, first index wins ties).
pub fn maxpool2x2(x: &Tensor) -> Result<(Tensor, Vec<u8>)> {
    if x.h % 2 != 0 || x.w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool2x2 needs even dims, got {}x{}",
            x.h, x.w
        )));
    }
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut y = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0u8; y.numel()];
    for n in 0..x.n {
        for c in 0..x.c {
            let xin = x.plane(n, c);
            let base = y.plane_index(n, c);
            let yout = y.plane_mut(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_k = 0u8;
                    for k in 0..4u8 {
                        let yy = oy * 2 + (k / 2) as usize;
                        let xx = ox * 2 + (k % 2) as usize;
                        let v = xin[yy * x.w + xx];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    yout[oy * ow + ox] = best;
                    arg[base + oy * ow + ox] = best_k;
                }
            }
        }
    }
    Ok((y, arg))
}

/// Route the gradient to each window's argmax.
pub fn maxpool2x2_backward(x_shape: (usize, usize, usize, usize), arg: &[u8], gy: &Tensor) -> Tensor {
    let (n, c, h, w) = x_shape;
    let mut gx = Tensor::zeros(n, c, h, w);
    let (oh, ow) = (gy.h, gy.w);
    for ni in 0..n {
        for ci in 0..c {
            let g = gy.plane(ni, ci);
            let base = gy.plane_index(ni, ci);
            let gout = gx.plane_mut(ni, ci);
            for oy in 0..oh {
                for ox in 0..ow {
                    let k = arg[base + oy * ow + ox];
                    let yy = oy * 2 + (k / 2) as usize;
                    let xx = ox * 2 + (k % 2) as usize;
                    gout[yy * w + xx] += g[oy * ow + ox];
                }
            }
        }
    }
    gx
}

pub fn upsample_nearest2x(x: &Tensor) -> Tensor {
    let mut y = Tensor::zeros(x.n, x.c, x.h * 2, x.w * 2);
    for n in 0..x.n {
        for c in 0..x.c {
            let xin = x.plane(n, c);
            let w2 = x.w * 2;
            let yout = y.plane_mut(n, c);
            for yy in 0..x.h * 2 {
                let sy = yy / 2;
                for xx in 0..w2 {
                    yout[yy * w2 + xx] = xin[sy * x.w + xx / 2];
                }
            }
        }
    }
    y
}

pub fn upsample_nearest2x_backward(gy: &Tensor) -> Tensor {
    let (h, w) = (gy.h / 2, gy.w / 2);
    let mut gx = Tensor::zeros(gy.n, gy.c, h, w);
    for n in 0..gy.n {
        for c in 0..gy.c {
            let g = gy.plane(n, c);
            let gout = gx.plane_mut(n, c);
            for yy in 0..gy.h {
                for xx in 0..gy.w {
                    gout[(yy / 2) * w + xx / 2] += g[yy * gy.w + xx];
                }
            }
        }
    }
    gx
}

/// Concatenate along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.n != b.n || a.h != b.h || a.w != b.w {
        return Err(Error::ShapeMismatch("concat needs matching N, H, W".into()));
    }
    let mut y = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for c in 0..a.c {
            y.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..b.c {
            y.plane_mut(n, a.c + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(y)
}

/// Split the gradient of a concat back into its two inputs.
pub fn concat_channels_backward(gy: &Tensor, c_a: usize) -> (Tensor, Tensor) {
    let c_b = gy.c - c_a;
    let mut ga = Tensor::zeros(gy.n, c_a, gy.h, gy.w);
    let mut gb = Tensor::zeros(gy.n, c_b, gy.h, gy.w);
    for n in 0..gy.n {
        for c in 0..c_a {
            ga.plane_mut(n, c).copy_from_slice(gy.plane(n, c));
        }
        for c in 0..c_b {
            gb.plane_mut(n, c).copy_from_slice(gy.plane(n, c_a + c));
        }
    }
    (ga, gb)
}

/// Dense projection over flattened feature maps: `(N, F) -> (N, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Weights `(out, in)` stored as a `(out, in, 1, 1)` tensor.
    pub w: Tensor,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub gw: Tensor,
    pub gb: Vec<f64>,
}

impl Linear {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self { w: Tensor::zeros(d_out, d_in, 1, 1), b: vec![0.0; d_out] }
    }

    pub fn init_he(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut l = Self::zeros(d_in, d_out);
        let limit = (6.0 / d_in as f64).sqrt();
        for v in &mut l.w.data {
            *v = rng.random_range(-limit..limit);
        }
        l
    }

    pub fn d_in(&self) -> usize {
        self.w.c
    }

    pub fn d_out(&self) -> usize {
        self.w.n
    }

    /// Input is any tensor with `C*H*W == d_in`; output is `(N, d_out, 1, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = x.c * x.h * x.w;
        if f != self.d_in() {
            return Err(Error::ShapeMismatch(format!(
                "linear expects {} features, got {f}",
                self.d_in()
            )));
        }
        let (d_out, d_in) = (self.d_out(), self.d_in());
        let mut y = Tensor::zeros(x.n, d_out, 1, 1);
        for n in 0..x.n {
            let xi = &x.data[n * f..(n + 1) * f];
            for o in 0..d_out {
                let wrow = &self.w.data[o * d_in..(o + 1) * d_in];
                let mut acc = self.b[o];
                for (wv, xv) in wrow.iter().zip(xi) {
                    acc += wv * xv;
                }
                y.data[n * d_out + o] = acc;
            }
        }
        Ok(y)
    }

    /// `x_shape` restores the original (C, H, W) of the flattened input.
    pub fn backward(
        &self,
        x: &Tensor,
        gy: &Tensor,
    ) -> Result<(Tensor, LinearGrad)> {
        let f = x.c * x.h * x.w;
        let (d_out, d_in) = (self.d_out(), self.d_in());
        if f != d_in || gy.c != d_out || gy.n != x.n {
            return Err(Error::ShapeMismatch("linear backward shapes".into()));
        }
        let mut gx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut gw = Tensor::zeros(d_out, d_in, 1, 1);
        let mut gb = vec![0.0; d_out];
        for n in 0..x.n {
            let xi = &x.data[n * f..(n + 1) * f];
            let gxi = &mut gx.data[n * f..(n + 1) * f];
            for o in 0..d_out {
                let g = gy.data[n * d_out + o];
                gb[o] += g;
                let wrow = &self.w.data[o * d_in..(o + 1) * d_in];
                let gwrow = &mut gw.data[o * d_in..(o + 1) * d_in];
                for i in 0..d_in {
                    gxi[i] += g * wrow[i];
                    gwrow[i] += g * xi[i];
                }
            }
        }
        Ok((gx, LinearGrad { gw, gb }))
    }
}

/// Per-pixel softmax over channels.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let hw = x.h * x.w;
    for n in 0..x.n {
        for p in 0..hw {
            let mut maxv = f64::NEG_INFINITY;
            for c in 0..x.c {
                maxv = maxv.max(x.data[(n * x.c + c) * hw + p]);
            }
            let mut denom = 0.0;
            for c in 0..x.c {
                let e = (x.data[(n * x.c + c) * hw + p] - maxv).exp();
                y.data[(n * x.c + c) * hw + p] = e;
                denom += e;
            }
            for c in 0..x.c {
                y.data[(n * x.c + c) * hw + p] /= denom;
            }
        }
    }
    y
}

/// Mean per-pixel cross-entropy between channel logits and a class raster.
/// Returns the loss and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, target: &[u8]) -> Result<(f64, Tensor)> {
    let hw = logits.h * logits.w;
    if target.len() != logits.n * hw {
        return Err(Error::ShapeMismatch(format!(
            "{} targets for {} pixels",
            target.len(),
            logits.n * hw
        )));
    }
    let probs = softmax_channels(logits);
    let scale = 1.0 / (logits.n * hw) as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for n in 0..logits.n {
        for p in 0..hw {
            let t = target[n * hw + p] as usize;
            if t >= logits.c {
                return Err(Error::Range(format!("class {t} out of {} channels", logits.c)));
            }
            let pt = probs.data[(n * logits.c + t) * hw + p];
            loss -= (pt.max(1e-300)).ln();
            grad.data[(n * logits.c + t) * hw + p] -= 1.0;
        }
    }
    for g in &mut grad.data {
        *g *= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean squared error and its gradient w.r.t. `a`.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("mse operands".into()));
    }
    let scale = 1.0 / a.numel() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(a.n, a.c, a.h, a.w);
    for i in 0..a.data.len() {
        let d = a.data[i] - b.data[i];
        loss += d * d;
        grad.data[i] = 2.0 * d * scale;
    }
    Ok((loss * scale, grad))
}
