//! Dense row-major tensors and the forward numeric kernels built on them.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array stored row-major.
///
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("zero-sized dimension in {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Pointwise binary map between equal shapes, or with a one-element operand.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape == other.shape {
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        if other.is_scalar() {
            let b = other.data[0];
            return Ok(self.map(|a| f(a, b)));
        }
        if self.is_scalar() {
            let a = self.data[0];
            return Ok(other.map(|b| f(a, b)));
        }
        shape_err(format!(
            "cannot combine shapes {:?} and {:?}",
            self.shape, other.shape
        ))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Converts element type, e.g. `f64` features to `f32` storage.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => shape_err(format!("{what}: expected a matrix, got {:?}", self.shape)),
        }
    }

    fn dims4(&self, what: &str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => shape_err(format!("{what}: expected rank 4, got {:?}", self.shape)),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                out.push(self.data[i * n + j]);
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul lhs")?;
        let (k2, n) = rhs.dims2("matmul rhs")?;
        if k != k2 {
            return shape_err(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, rhs.shape
            ));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Cross-correlation with zero padding. `self` is N×C×H×W, `kernel` F×C×kh×kw.
    pub fn conv2d(&self, kernel: &Self, stride: usize, pad: usize) -> Result<Self> {
        let g = ConvGeometry::new(self.shape(), kernel.shape(), stride, pad)?;
        let (rows, cols) = (g.col_rows(), g.oh * g.ow);
        let mut out = vec![T::zero(); g.n * g.f * cols];
        for (n, o_batch) in out.chunks_mut(g.f * cols).enumerate() {
            let patches = g.im2col(&self.data[n * g.c * g.h * g.w..][..g.c * g.h * g.w]);
            for (f, o_plane) in o_batch.chunks_mut(cols).enumerate() {
                for (r, &wv) in kernel.data[f * rows..(f + 1) * rows].iter().enumerate() {
                    if wv != T::zero() {
                        axpy(o_plane, wv, &patches[r * cols..(r + 1) * cols]);
                    }
                }
            }
        }
        Tensor::new(vec![g.n, g.f, g.oh, g.ow], out)
    }

    /// Nearest-neighbour ×2 upsampling of the last two axes.
    pub fn upsample2x(&self) -> Result<Self> {
        let [n, c, h, w] = self.dims4("upsample2x")?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in self.data.chunks(h * w) {
            for i in 0..oh {
                let row = &plane[(i / 2) * w..(i / 2 + 1) * w];
                for j in 0..ow {
                    out.push(row[j / 2]);
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// 2×2 area-average downsampling of the last two axes.
    pub fn downsample2x(&self) -> Result<Self> {
        let [n, c, h, w] = self.dims4("downsample2x")?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("downsample2x needs even sides, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in self.data.chunks(h * w) {
            for i in 0..oh {
                for j in 0..ow {
                    let a = plane[2 * i * w + 2 * j];
                    let b = plane[2 * i * w + 2 * j + 1];
                    let cc = plane[(2 * i + 1) * w + 2 * j];
                    let d = plane[(2 * i + 1) * w + 2 * j + 1];
                    out.push((a + b + cc + d) * quarter);
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// Adds `bias[c]` to every element of channel `c` of an N×C×H×W tensor.
    pub fn add_channel_bias(&self, bias: &Self) -> Result<Self> {
        let [_, c, h, w] = self.dims4("channel bias")?;
        if bias.numel() != c {
            return shape_err(format!(
                "channel bias of {} values for {c} channels",
                bias.numel()
            ));
        }
        let mut out = self.data.clone();
        for (idx, plane) in out.chunks_mut(h * w).enumerate() {
            let b = bias.data[idx % c];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
        Tensor::new(self.shape.clone(), out)
    }
}

/// Index arithmetic shared by the convolution forward and backward passes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = match *input {
            [a, b, c, d] => [a, b, c, d],
            _ => return shape_err(format!("conv2d input must be rank 4, got {input:?}")),
        };
        let [f, kc, kh, kw] = match *kernel {
            [a, b, c, d] => [a, b, c, d],
            _ => return shape_err(format!("conv2d kernel must be rank 4, got {kernel:?}")),
        };
        if stride == 0 {
            return shape_err("conv2d stride must be at least 1");
        }
        if kc != c {
            return shape_err(format!(
                "conv2d kernel expects {kc} channels, input has {c}"
            ));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return shape_err(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeometry {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        })
    }

    /// Rows of the unfolded input: one per (channel, kernel row, kernel column).
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Unfolds one C×H×W image into a `col_rows() × (oh·ow)` patch matrix.
    pub fn im2col<T: Scalar>(&self, image: &[T]) -> Vec<T> {
        let cols = self.oh * self.ow;
        let mut out = vec![T::zero(); self.col_rows() * cols];
        let mut r = 0;
        for c in 0..self.c {
            let plane = &image[c * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let dst = &mut out[r * cols..(r + 1) * cols];
                    let (lo, hi) = self.valid_cols(kj);
                    for oi in 0..self.oh {
                        let Some(ii) = self.in_index(oi, ki, self.h) else {
                            continue;
                        };
                        let src = &plane[ii * self.w..(ii + 1) * self.w];
                        let row = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        for oj in lo..hi {
                            row[oj] = src[oj * self.stride + kj - self.pad];
                        }
                    }
                    r += 1;
                }
            }
        }
        out
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds patches into a C×H×W image.
    pub fn col2im<T: Scalar>(&self, patches: &[T], image: &mut [T]) {
        let cols = self.oh * self.ow;
        let mut r = 0;
        for c in 0..self.c {
            let plane = &mut image[c * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let src = &patches[r * cols..(r + 1) * cols];
                    let (lo, hi) = self.valid_cols(kj);
                    for oi in 0..self.oh {
                        let Some(ii) = self.in_index(oi, ki, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[ii * self.w..(ii + 1) * self.w];
                        let row = &src[oi * self.ow..(oi + 1) * self.ow];
                        for oj in lo..hi {
                            let j = oj * self.stride + kj - self.pad;
                            dst[j] = dst[j] + row[oj];
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    /// Input row for output row `o` and kernel row `k`, if inside the image.
    #[inline]
    pub fn in_index(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = o * self.stride + k;
        if pos < self.pad || pos - self.pad >= extent {
            None
        } else {
            Some(pos - self.pad)
        }
    }

    /// Output column range whose input column for kernel column `k` is in bounds.
    #[inline]
    pub fn valid_cols(&self, k: usize) -> (usize, usize) {
        let s = self.stride;
        // smallest oj with oj*s + k >= pad
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s)
        };
        // largest oj with oj*s + k - pad <= w - 1
        let limit = self.w + self.pad;
        let hi = if k >= limit {
            0
        } else {
            ((limit - 1 - k) / s + 1).min(self.ow)
        };
        (lo.min(hi), hi)
    }
}

/// `y += a·x`.
#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o = *o + a * v;
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ar.iter().zip(br) {
        tail = tail + x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
