//! Numeric kernels behind the gradient rules.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{axpy, dot, ConvGeometry, Tensor};

/// `ln(1 + e^x)` without overflow for large |x|.
#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Reduces a gradient to the shape of an operand that was scalar-broadcast.
pub(crate) fn unbroadcast<T: Scalar>(g: &Tensor<T>, operand: &Tensor<T>) -> Tensor<T> {
    if g.shape() == operand.shape() {
        g.clone()
    } else {
        Tensor::full(operand.shape(), g.sum())
    }
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_x: bool,
    want_w: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let geo = ConvGeometry::new(x.shape(), w.shape(), stride, pad)?;
    if g.shape() != [geo.n, geo.f, geo.oh, geo.ow] {
        return shape_err(format!("conv2d upstream gradient shape {:?}", g.shape()));
    }
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut gx = want_x.then(|| vec![T::zero(); xd.len()]);
    let mut gw = want_w.then(|| vec![T::zero(); wd.len()]);
    let (rows, cols) = (geo.col_rows(), geo.oh * geo.ow);
    let image = geo.c * geo.h * geo.w;

    for n in 0..geo.n {
        let g_batch = &gd[n * geo.f * cols..][..geo.f * cols];
        if let Some(gw) = gw.as_mut() {
            let patches = geo.im2col(&xd[n * image..][..image]);
            for (f, g_plane) in g_batch.chunks(cols).enumerate() {
                for (r, acc) in gw[f * rows..(f + 1) * rows].iter_mut().enumerate() {
                    *acc = *acc + dot(g_plane, &patches[r * cols..(r + 1) * cols]);
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            let mut dpatches = vec![T::zero(); rows * cols];
            for (f, g_plane) in g_batch.chunks(cols).enumerate() {
                for (r, &wv) in wd[f * rows..(f + 1) * rows].iter().enumerate() {
                    if wv != T::zero() {
                        axpy(&mut dpatches[r * cols..(r + 1) * cols], wv, g_plane);
                    }
                }
            }
            geo.col2im(&dpatches, &mut gx[n * image..][..image]);
        }
    }
    let gx = gx
        .map(|d| Tensor::new(x.shape().to_vec(), d))
        .transpose()?;
    let gw = gw
        .map(|d| Tensor::new(w.shape().to_vec(), d))
        .transpose()?;
    Ok((gx, gw))
}

fn demod_dims<T: Scalar>(kernel: &Tensor<T>, scales: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [f, c, kh, kw] = match *kernel.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return shape_err(format!("demodulate kernel must be rank 4, got {:?}", kernel.shape())),
    };
    if scales.numel() != c {
        return shape_err(format!(
            "demodulate: {} style scales for {c} input channels",
            scales.numel()
        ));
    }
    Ok((f, c, kh * kw))
}

/// `w''[f,c,k] = s[c]·w[f,c,k] / sqrt(Σ_{c,k} (s[c]·w[f,c,k])² + eps)`.
pub(crate) fn demodulate<T: Scalar>(kernel: &Tensor<T>, scales: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (f, c, k) = demod_dims(kernel, scales)?;
    let s = scales.data();
    let w = kernel.data();
    let mut out = Vec::with_capacity(w.len());
    for fi in 0..f {
        let slice = &w[fi * c * k..(fi + 1) * c * k];
        let mut ss = T::zero();
        for (idx, &v) in slice.iter().enumerate() {
            let m = s[idx / k] * v;
            ss = ss + m * m;
        }
        let norm = (ss + eps).sqrt();
        for (idx, &v) in slice.iter().enumerate() {
            out.push(s[idx / k] * v / norm);
        }
    }
    Tensor::new(kernel.shape().to_vec(), out)
}

pub(crate) fn demodulate_backward<T: Scalar>(
    kernel: &Tensor<T>,
    scales: &Tensor<T>,
    eps: T,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (f, c, k) = demod_dims(kernel, scales)?;
    let s = scales.data();
    let w = kernel.data();
    let gd = g.data();
    let mut gk = vec![T::zero(); w.len()];
    let mut gs = vec![T::zero(); c];
    for fi in 0..f {
        let range = fi * c * k..(fi + 1) * c * k;
        let slice = &w[range.clone()];
        let gslice = &gd[range.clone()];
        let mut ss = T::zero();
        let mut dot = T::zero();
        for (idx, (&v, &gv)) in slice.iter().zip(gslice).enumerate() {
            let m = s[idx / k] * v;
            ss = ss + m * m;
            dot = dot + gv * m;
        }
        let sigma = (ss + eps).sqrt().recip();
        let sigma3 = sigma * sigma * sigma;
        for (idx, (&v, &gv)) in slice.iter().zip(gslice).enumerate() {
            let ch = idx / k;
            let m = s[ch] * v;
            let gm = sigma * gv - sigma3 * m * dot;
            gk[range.start + idx] = gm * s[ch];
            gs[ch] = gs[ch] + gm * v;
        }
    }
    Ok((
        Tensor::new(kernel.shape().to_vec(), gk)?,
        Tensor::new(scales.shape().to_vec(), gs)?,
    ))
}

pub(crate) fn channel_bias_backward<T: Scalar>(g: &Tensor<T>, bias_shape: &[usize]) -> Result<Tensor<T>> {
    let [_, c, h, w] = match *g.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return shape_err("channel bias gradient must be rank 4"),
    };
    let mut out = vec![T::zero(); c];
    for (idx, plane) in g.data().chunks(h * w).enumerate() {
        out[idx % c] = out[idx % c] + plane.iter().copied().sum::<T>();
    }
    Tensor::new(bias_shape.to_vec(), out)
}

pub(crate) fn upsample2x_backward<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = match *g.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return shape_err("upsample gradient must be rank 4"),
    };
    let (h, w) = (oh / 2, ow / 2);
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in g.data().chunks(oh * ow) {
        for i in 0..h {
            for j in 0..w {
                out.push(
                    plane[2 * i * ow + 2 * j]
                        + plane[2 * i * ow + 2 * j + 1]
                        + plane[(2 * i + 1) * ow + 2 * j]
                        + plane[(2 * i + 1) * ow + 2 * j + 1],
                );
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}
