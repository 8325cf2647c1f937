//! Batched layer kernels. Buffers are flat and batch-major; images are
//! `[batch, height, width, channels]`.

use super::gemm::{matmul, matmul_bt};
use super::spec::Activation;

pub(crate) fn apply_activation(values: &mut [f64], act: Activation) {
    if act != Activation::Identity {
        values.iter_mut().for_each(|v| *v = act.apply(*v));
    }
}

/// Multiplies an upstream gradient by the activation derivative in place.
pub(crate) fn activation_backward(grad: &mut [f64], output: &[f64], act: Activation) {
    if act != Activation::Identity {
        for (g, &y) in grad.iter_mut().zip(output) {
            *g *= act.derivative_from_output(y);
        }
    }
}

/// `y = act(x Wᵀ + b)` for `x: [batch, m]`, `W: [n, m]`.
pub(crate) fn dense(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    n: usize,
    act: Activation,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * n];
    for row in y.chunks_exact_mut(n) {
        row.copy_from_slice(b);
    }
    matmul_bt(x, w, &mut y, batch, m, n, true);
    apply_activation(&mut y, act);
    y
}

/// Geometry of a stride-1 "same" convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }

    fn pad_top(&self) -> usize {
        (self.kh - 1) / 2
    }

    fn pad_left(&self) -> usize {
        (self.kw - 1) / 2
    }
}

/// Unfolds `x: [batch, h, w, c]` into patches `[batch * h * w, kh * kw * c]`,
/// patch entries ordered (ky, kx, channel) to match the filter layout.
pub(crate) fn im2col(x: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let k = g.patch_len();
    let mut cols = vec![0.0; batch * g.positions() * k];
    let (pt, pl) = (g.pad_top() as isize, g.pad_left() as isize);
    for b in 0..batch {
        let img = &x[b * g.positions() * g.c..(b + 1) * g.positions() * g.c];
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = &mut cols[((b * g.h + y) * g.w + xx) * k..][..k];
                for ky in 0..g.kh {
                    let iy = y as isize + ky as isize - pt;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = xx as isize + kx as isize - pl;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.c;
                        let dst = (ky * g.kw + kx) * g.c;
                        row[dst..dst + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the image.
pub(crate) fn col2im(dcols: &[f64], batch: usize, g: ConvGeom) -> Vec<f64> {
    let k = g.patch_len();
    let mut dx = vec![0.0; batch * g.positions() * g.c];
    let (pt, pl) = (g.pad_top() as isize, g.pad_left() as isize);
    for b in 0..batch {
        let img = &mut dx[b * g.positions() * g.c..(b + 1) * g.positions() * g.c];
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = &dcols[((b * g.h + y) * g.w + xx) * k..][..k];
                for ky in 0..g.kh {
                    let iy = y as isize + ky as isize - pt;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = xx as isize + kx as isize - pl;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.c;
                        let src = (ky * g.kw + kx) * g.c;
                        for (d, s) in img[dst..dst + g.c].iter_mut().zip(&row[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution forward from precomputed patches; `w: [filters, kh, kw, c]`.
pub(crate) fn conv_from_cols(
    cols: &[f64],
    w: &[f64],
    b: &[f64],
    rows: usize,
    k: usize,
    filters: usize,
    act: Activation,
) -> Vec<f64> {
    dense(cols, w, b, rows, k, filters, act)
}

/// Gradient w.r.t. the patches: `dcols = delta · W`.
pub(crate) fn conv_dcols(
    delta: &[f64],
    w: &[f64],
    rows: usize,
    k: usize,
    filters: usize,
) -> Vec<f64> {
    let mut dcols = vec![0.0; rows * k];
    matmul(delta, w, &mut dcols, rows, filters, k, false);
    dcols
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub ph: usize,
    pub pw: usize,
}

impl PoolGeom {
    fn out_h(&self) -> usize {
        self.h / self.ph
    }
    fn out_w(&self) -> usize {
        self.w / self.pw
    }
}

pub(crate) fn avg_pool(x: &[f64], batch: usize, g: PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let scale = 1.0 / (g.ph * g.pw) as f64;
    let mut y = vec![0.0; batch * oh * ow * g.c];
    for b in 0..batch {
        let img = &x[b * g.h * g.w * g.c..];
        let out = &mut y[b * oh * ow * g.c..(b + 1) * oh * ow * g.c];
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out[(oy * ow + ox) * g.c..][..g.c];
                for py in 0..g.ph {
                    for px in 0..g.pw {
                        let src = ((oy * g.ph + py) * g.w + ox * g.pw + px) * g.c;
                        for (d, s) in dst.iter_mut().zip(&img[src..src + g.c]) {
                            *d += s;
                        }
                    }
                }
                dst.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    y
}

pub(crate) fn avg_pool_backward(dy: &[f64], batch: usize, g: PoolGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let scale = 1.0 / (g.ph * g.pw) as f64;
    let mut dx = vec![0.0; batch * g.h * g.w * g.c];
    for b in 0..batch {
        let grad = &dy[b * oh * ow * g.c..(b + 1) * oh * ow * g.c];
        let img = &mut dx[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &grad[(oy * ow + ox) * g.c..][..g.c];
                for py in 0..g.ph {
                    for px in 0..g.pw {
                        let dst = ((oy * g.ph + py) * g.w + ox * g.pw + px) * g.c;
                        for (d, s) in img[dst..dst + g.c].iter_mut().zip(src) {
                            *d = s * scale;
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn global_avg_pool_1d(x: &[f64], batch: usize, steps: usize, dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * dim];
    let scale = 1.0 / steps as f64;
    for b in 0..batch {
        let out = &mut y[b * dim..(b + 1) * dim];
        for t in 0..steps {
            let src = &x[(b * steps + t) * dim..][..dim];
            for (o, s) in out.iter_mut().zip(src) {
                *o += s;
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
    }
    y
}

pub(crate) fn global_avg_pool_1d_backward(
    dy: &[f64],
    batch: usize,
    steps: usize,
    dim: usize,
) -> Vec<f64> {
    let scale = 1.0 / steps as f64;
    let mut dx = vec![0.0; batch * steps * dim];
    for b in 0..batch {
        let src = &dy[b * dim..(b + 1) * dim];
        for t in 0..steps {
            for (d, s) in dx[(b * steps + t) * dim..][..dim].iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    dx
}
