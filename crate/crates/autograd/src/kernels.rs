//! Forward and backward kernels on raw tensors.
//!
//! Every differentiable op on the tape is a thin wrapper around a pair of
//! functions here, so non-differentiable callers (resampling inside the
//! diffusion process, metrics) use the exact same arithmetic.

use crate::{Result, Tensor, TensorError};

/// `c = a' * b' + beta * c` where `a'`/`b'` are optionally transposed.
///
/// `a'` is `m x k`, `b'` is `k x n`, `c` is `m x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths were checked above and the strides describe exactly
    // those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kernel) / self.stride + 1,
            (self.w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (c, h, wd) = x.dims3()?;
    let (o, ci, kh, kw) = match w.shape()[..] {
        [o, ci, kh, kw] => (o, ci, kh, kw),
        _ => {
            return Err(TensorError::Rank {
                op: "conv2d weight",
                expected: 4,
                shape: w.shape().to_vec(),
            })
        }
    };
    if ci != c || kh != kw || stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    Ok(ConvGeom {
        in_ch: c,
        out_ch: o,
        kernel: kh,
        stride,
        pad,
        h,
        w: wd,
    })
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let mut cols = vec![0.0; g.in_ch * k * k * ho * wo];
    for c in 0..g.in_ch {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let k = g.kernel;
    let mut x = vec![0.0; g.in_ch * g.h * g.w];
    for c in 0..g.in_ch {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Dense convolution: `x (C,H,W)`, `w (O,C,k,k)`, `b (O)`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, w, stride, pad)?;
    b.expect_shape(&[g.out_ch], "conv2d bias")?;
    let (ho, wo) = g.out_hw();
    let l = ho * wo;
    let kk = g.in_ch * g.kernel * g.kernel;
    let mut y = vec![0.0; g.out_ch * l];
    for (o, row) in y.chunks_mut(l).enumerate() {
        row.fill(b.data()[o]);
    }
    if g.is_pointwise() {
        gemm(g.out_ch, kk, l, w.data(), false, x.data(), false, &mut y, 1.0);
    } else {
        let cols = im2col(x.data(), &g);
        gemm(g.out_ch, kk, l, w.data(), false, &cols, false, &mut y, 1.0);
    }
    Tensor::from_vec(&[g.out_ch, ho, wo], y)
}

/// Gradients of [`conv2d`] with respect to `(x, w, b)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = conv_geom(x, w, stride, pad)?;
    let (ho, wo) = g.out_hw();
    gy.expect_shape(&[g.out_ch, ho, wo], "conv2d grad")?;
    let l = ho * wo;
    let kk = g.in_ch * g.kernel * g.kernel;
    let gb: Vec<f64> = gy.data().chunks(l).map(|r| r.iter().sum()).collect();
    let mut gw = vec![0.0; g.out_ch * kk];
    let gx = if g.is_pointwise() {
        gemm(g.out_ch, l, kk, gy.data(), false, x.data(), true, &mut gw, 0.0);
        let mut gx = vec![0.0; kk * l];
        gemm(kk, g.out_ch, l, w.data(), true, gy.data(), false, &mut gx, 0.0);
        gx
    } else {
        let cols = im2col(x.data(), &g);
        gemm(g.out_ch, l, kk, gy.data(), false, &cols, true, &mut gw, 0.0);
        let mut gcols = vec![0.0; kk * l];
        gemm(kk, g.out_ch, l, w.data(), true, gy.data(), false, &mut gcols, 0.0);
        col2im(&gcols, &g)
    };
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(w.shape(), gw)?,
        Tensor::from_vec(&[g.out_ch], gb)?,
    ))
}

fn depthwise_geom(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c, h, wd) = x.dims3()?;
    match w.shape()[..] {
        [wc, 1, kh, kw] if wc == c && kh == kw && kh % 2 == 1 => Ok((c, h, wd, kh)),
        _ => Err(TensorError::ShapeMismatch {
            op: "depthwise_conv2d",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        }),
    }
}

/// Per-channel "same" convolution with an odd kernel: `w (C,1,k,k)`, `b (C)`.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c, h, wd, k) = depthwise_geom(x, w)?;
    b.expect_shape(&[c], "depthwise bias")?;
    let pad = (k / 2) as isize;
    let mut y = vec![0.0; c * h * wd];
    for ch in 0..c {
        let plane = &x.data()[ch * h * wd..(ch + 1) * h * wd];
        let ker = &w.data()[ch * k * k..(ch + 1) * k * k];
        let out = &mut y[ch * h * wd..(ch + 1) * h * wd];
        out.fill(b.data()[ch]);
        for ky in 0..k {
            for kx in 0..k {
                let kv = ker[ky * k + kx];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * wd..(iy as usize + 1) * wd];
                    let dst = &mut out[oy * wd..(oy + 1) * wd];
                    let lo = (-dx).max(0) as usize;
                    let hi = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    for ox in lo..hi {
                        dst[ox] += kv * src[(ox as isize + dx) as usize];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, h, wd], y)
}

/// Gradients of [`depthwise_conv2d`] with respect to `(x, w, b)`.
pub fn depthwise_conv2d_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, wd, k) = depthwise_geom(x, w)?;
    gy.expect_shape(x.shape(), "depthwise grad")?;
    let pad = (k / 2) as isize;
    let mut gx = vec![0.0; c * h * wd];
    let mut gw = vec![0.0; c * k * k];
    let mut gb = vec![0.0; c];
    for ch in 0..c {
        let plane = &x.data()[ch * h * wd..(ch + 1) * h * wd];
        let gplane = &gy.data()[ch * h * wd..(ch + 1) * h * wd];
        let ker = &w.data()[ch * k * k..(ch + 1) * k * k];
        gb[ch] = gplane.iter().sum();
        let gxp = &mut gx[ch * h * wd..(ch + 1) * h * wd];
        for ky in 0..k {
            for kx in 0..k {
                let kv = ker[ky * k + kx];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let mut acc = 0.0;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let lo = (-dx).max(0) as usize;
                    let hi = (wd as isize - dx).min(wd as isize).max(0) as usize;
                    for ox in lo..hi {
                        let src = iy as usize * wd + (ox as isize + dx) as usize;
                        let gv = gplane[oy * wd + ox];
                        acc += gv * plane[src];
                        gxp[src] += gv * kv;
                    }
                }
                gw[ch * k * k + ky * k + kx] = acc;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(w.shape(), gw)?,
        Tensor::from_vec(&[c], gb)?,
    ))
}

/// Block-mean (area) downsampling by an integer factor.
pub fn avg_pool(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(TensorError::NotDivisible {
            op: "avg_pool",
            shape: x.shape().to_vec(),
            factor,
        });
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / factor, w / factor);
    let inv = 1.0 / (factor * factor) as f64;
    let mut y = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for iy in 0..h {
            let row = &x.data()[(ch * h + iy) * w..(ch * h + iy + 1) * w];
            let out = &mut y[(ch * ho + iy / factor) * wo..(ch * ho + iy / factor + 1) * wo];
            for (ix, &v) in row.iter().enumerate() {
                out[ix / factor] += v * inv;
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], y)
}

pub fn avg_pool_backward(gy: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, ho, wo) = gy.dims3()?;
    let inv = 1.0 / (factor * factor) as f64;
    let (h, w) = (ho * factor, wo * factor);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                gx[(ch * h + iy) * w + ix] = gy.data()[(ch * ho + iy / factor) * wo + ix / factor] * inv;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], gx)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let (ho, wo) = (h * factor, w * factor);
    let mut y = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                y[(ch * ho + oy) * wo + ox] = x.data()[(ch * h + oy / factor) * w + ox / factor];
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], y)
}

pub fn upsample_nearest_backward(gy: &Tensor, factor: usize) -> Result<Tensor> {
    // Summing each block is the adjoint of replication.
    let (c, ho, wo) = gy.dims3()?;
    let (h, w) = (ho / factor, wo / factor);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                gx[(ch * h + oy / factor) * w + ox / factor] += gy.data()[(ch * ho + oy) * wo + ox];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], gx)
}

/// Half-pixel-centred linear interpolation taps for one axis.
///
/// Each output index reads `(i0, i1, weight_of_i1)`.
pub fn linear_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to `(out_h, out_w)` with half-pixel centres and edge clamping.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::Invalid("resize_bilinear: empty output".into()));
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut y = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                y[(ch * out_h + oy) * out_w + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], y)
}

pub fn resize_bilinear_backward(gy: &Tensor, in_h: usize, in_w: usize) -> Result<Tensor> {
    let (c, out_h, out_w) = gy.dims3()?;
    let ty = linear_taps(in_h, out_h);
    let tx = linear_taps(in_w, out_w);
    let mut gx = vec![0.0; c * in_h * in_w];
    for ch in 0..c {
        let plane = &mut gx[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = gy.data()[(ch * out_h + oy) * out_w + ox];
                plane[y0 * in_w + x0] += g * (1.0 - ly) * (1.0 - lx);
                plane[y0 * in_w + x1] += g * (1.0 - ly) * lx;
                plane[y1 * in_w + x0] += g * ly * (1.0 - lx);
                plane[y1 * in_w + x1] += g * ly * lx;
            }
        }
    }
    Tensor::from_vec(&[c, in_h, in_w], gx)
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, cols) = x.dims2()?;
    let mut y = x.data().to_vec();
    for row in y.chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        let inv = 1.0 / s;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::from_vec(x.shape(), y)
}

/// Softmax backward given the softmax output `p`, in place on `g`.
pub fn softmax_rows_backward_inplace(p: &[f64], g: &mut [f64], cols: usize) {
    for (prow, grow) in p.chunks(cols).zip(g.chunks_mut(cols)) {
        let dot: f64 = prow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
        for (gv, &pv) in grow.iter_mut().zip(prow) {
            *gv = pv * (*gv - dot);
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalisation of `x (L, C)` with affine `gamma`, `beta` of length C.
/// Returns the output and the per-row `(mean, inv_std)`.
pub fn layer_norm_rows(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, Vec<(f64, f64)>)> {
    let (_, c) = x.dims2()?;
    gamma.expect_shape(&[c], "layer_norm gamma")?;
    beta.expect_shape(&[c], "layer_norm beta")?;
    let mut y = Vec::with_capacity(x.len());
    let mut stats = Vec::with_capacity(x.len() / c.max(1));
    for row in x.data().chunks(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, &v) in row.iter().enumerate() {
            y.push((v - mean) * inv * gamma.data()[j] + beta.data()[j]);
        }
        stats.push((mean, inv));
    }
    Ok((Tensor::from_vec(x.shape(), y)?, stats))
}

pub fn layer_norm_rows_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &[(f64, f64)],
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, c) = x.dims2()?;
    let mut gx = vec![0.0; x.len()];
    let mut gg = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    let mut xhat = vec![0.0; c];
    let mut gxhat = vec![0.0; c];
    for (r, (row, grow)) in x.data().chunks(c).zip(gy.data().chunks(c)).enumerate() {
        let (mean, inv) = stats[r];
        for j in 0..c {
            xhat[j] = (row[j] - mean) * inv;
            gxhat[j] = grow[j] * gamma.data()[j];
            gg[j] += grow[j] * xhat[j];
            gbeta[j] += grow[j];
        }
        let m1 = gxhat.iter().sum::<f64>() / c as f64;
        let m2 = gxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
        for j in 0..c {
            gx[r * c + j] = inv * (gxhat[j] - m1 - xhat[j] * m2);
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(&[c], gg)?,
        Tensor::from_vec(&[c], gbeta)?,
    ))
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_K * (v + GELU_A * v * v * v)).tanh())
}

pub fn gelu_grad(v: f64) -> f64 {
    let th = (GELU_K * (v + GELU_A * v * v * v)).tanh();
    0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_A * v * v)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Gated linear recurrence over token rows visited in `order`:
/// `h = a[p] * h + b[p] * u[p]`, `y[p] = c[p] * h`, starting from `h = 0`.
///
/// All operands are `(L, D)`; the returned states are stored in visit order
/// for the backward pass.
pub fn gated_scan(a: &Tensor, b: &Tensor, c: &Tensor, u: &Tensor, order: &[usize]) -> Result<(Tensor, Vec<f64>)> {
    let (l, d) = u.dims2()?;
    for t in [a, b, c] {
        t.expect_shape(u.shape(), "gated_scan")?;
    }
    if order.len() != l {
        return Err(TensorError::Invalid(format!(
            "gated_scan: order has {} entries for {} tokens",
            order.len(),
            l
        )));
    }
    let mut y = vec![0.0; l * d];
    let mut states = vec![0.0; l * d];
    let mut h = vec![0.0; d];
    for (k, &p) in order.iter().enumerate() {
        let r = p * d..(p + 1) * d;
        let (ar, br, cr, ur) = (
            &a.data()[r.clone()],
            &b.data()[r.clone()],
            &c.data()[r.clone()],
            &u.data()[r.clone()],
        );
        for j in 0..d {
            h[j] = ar[j] * h[j] + br[j] * ur[j];
            y[p * d + j] = cr[j] * h[j];
        }
        states[k * d..(k + 1) * d].copy_from_slice(&h);
    }
    Ok((Tensor::from_vec(&[l, d], y)?, states))
}

/// Gradients of [`gated_scan`] with respect to `(a, b, c, u)`.
pub fn gated_scan_backward(
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    u: &Tensor,
    order: &[usize],
    states: &[f64],
    gy: &Tensor,
) -> Result<[Tensor; 4]> {
    let (l, d) = u.dims2()?;
    let mut ga = vec![0.0; l * d];
    let mut gb = vec![0.0; l * d];
    let mut gc = vec![0.0; l * d];
    let mut gu = vec![0.0; l * d];
    let mut carry = vec![0.0; d];
    for k in (0..l).rev() {
        let p = order[k];
        for j in 0..d {
            let i = p * d + j;
            let h = states[k * d + j];
            let h_prev = if k == 0 { 0.0 } else { states[(k - 1) * d + j] };
            let gh = gy.data()[i] * c.data()[i] + carry[j];
            gc[i] = gy.data()[i] * h;
            ga[i] = gh * h_prev;
            gb[i] = gh * u.data()[i];
            gu[i] = gh * b.data()[i];
            carry[j] = gh * a.data()[i];
        }
    }
    Ok([
        Tensor::from_vec(&[l, d], ga)?,
        Tensor::from_vec(&[l, d], gb)?,
        Tensor::from_vec(&[l, d], gc)?,
        Tensor::from_vec(&[l, d], gu)?,
    ])
}

/// Channel-wise mean and max maps of `x (C,H,W)`, each `(1,H,W)`.
/// The max map also returns the winning channel per pixel.
pub fn channel_mean(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let hw = h * w;
    let mut y = vec![0.0; hw];
    for plane in x.data().chunks(hw) {
        for (o, &v) in y.iter_mut().zip(plane) {
            *o += v;
        }
    }
    y.iter_mut().for_each(|v| *v /= c as f64);
    Tensor::from_vec(&[1, h, w], y)
}

pub fn channel_max(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (_, h, w) = x.dims3()?;
    let hw = h * w;
    let mut y = vec![f64::NEG_INFINITY; hw];
    let mut arg = vec![0usize; hw];
    for (ch, plane) in x.data().chunks(hw).enumerate() {
        for i in 0..hw {
            if plane[i] > y[i] {
                y[i] = plane[i];
                arg[i] = ch;
            }
        }
    }
    Ok((Tensor::from_vec(&[1, h, w], y)?, arg))
}
