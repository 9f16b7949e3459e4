//! Dense row-major `f64` tensors and the handful of kernels the rest of the
//! crate is built on.
//!
//! All matrix kernels accumulate in `f64` and sum over the inner dimension in
//! increasing index order, so results are reproducible bit for bit.

use std::fmt;

use crate::error::{ensure_finite, shape_err, Result, TandemError};

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const MAX: usize = 16;
        write!(f, "DenseTensor{:?} ", self.shape)?;
        if self.data.len() <= MAX {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..MAX])
        }
    }
}

impl DenseTensor {
    /// Builds a tensor, rejecting a size mismatch or any non-finite value.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        ensure_finite(&data, "DenseTensor::new")?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return shape_err("ragged rows");
        }
        Self::new(vec![m, n], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn vector(values: &[f64]) -> Result<Self> {
        Self::new(vec![values.len()], values.to_vec())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(self.data[flat])
    }

    /// Elementwise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        ensure_finite(&data, "map")?;
        Ok(Self::from_parts_unchecked(self.shape.clone(), data))
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        ensure_finite(&data, "zip_map")?;
        Ok(Self::from_parts_unchecked(self.shape.clone(), data))
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        self.map(|v| v * k)
    }

    /// Sum of all entries in storage order.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return shape_err("transpose needs a matrix");
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts_unchecked(vec![n, m], out))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return shape_err("matmul needs two matrices");
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return shape_err(format!("matmul inner dims {k} vs {k2}"));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    ensure_finite(&out, "matmul")?;
    Ok(DenseTensor::from_parts_unchecked(vec![m, n], out))
}

/// Output spatial size of a strided, zero-padded cross-correlation.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Spatial geometry of one 2-D cross-correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        conv_output_dim(self.in_h, self.kh, self.stride, self.padding).unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        conv_output_dim(self.in_w, self.kw, self.stride, self.padding).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(TandemError::Parameter("conv stride must be positive".into()));
        }
        if [
            self.in_channels,
            self.in_h,
            self.in_w,
            self.out_channels,
            self.kh,
            self.kw,
        ]
        .contains(&0)
        {
            return shape_err(format!("degenerate conv geometry {self:?}"));
        }
        if conv_output_dim(self.in_h, self.kh, self.stride, self.padding).is_none()
            || conv_output_dim(self.in_w, self.kw, self.stride, self.padding).is_none()
        {
            return shape_err(format!(
                "kernel {}x{} larger than padded input {}x{}",
                self.kh,
                self.kw,
                self.in_h + 2 * self.padding,
                self.in_w + 2 * self.padding
            ));
        }
        Ok(())
    }

    pub fn in_size(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_size(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }

    /// Rows of the patch matrix: `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

/// `input[N×C×H×W] ⋆ kernel[F×C×kh×kw]`, cross-correlation with zero padding.
pub fn conv2d(
    input: &DenseTensor,
    kernel: &DenseTensor,
    stride: usize,
    padding: usize,
) -> Result<DenseTensor> {
    if input.rank() != 4 || kernel.rank() != 4 {
        return shape_err("conv2d needs NCHW input and FCkk kernel");
    }
    if input.shape[1] != kernel.shape[1] {
        return shape_err(format!(
            "conv2d channel mismatch: input {} vs kernel {}",
            input.shape[1], kernel.shape[1]
        ));
    }
    let geo = ConvShape {
        in_channels: input.shape[1],
        in_h: input.shape[2],
        in_w: input.shape[3],
        out_channels: kernel.shape[0],
        kh: kernel.shape[2],
        kw: kernel.shape[3],
        stride,
        padding,
    };
    geo.validate()?;
    let n = input.shape[0];
    let mut out = vec![0.0; n * geo.out_size()];
    conv_forward(&geo, &input.data, &kernel.data, &mut out, n);
    ensure_finite(&out, "conv2d")?;
    Ok(DenseTensor::from_parts_unchecked(
        vec![n, geo.out_channels, geo.out_h(), geo.out_w()],
        out,
    ))
}

/// Sums over `axis`, removing it. A rank-1 input reduces to shape `[1]`.
pub fn reduce_sum(t: &DenseTensor, axis: usize) -> Result<DenseTensor> {
    if axis >= t.rank() {
        return shape_err(format!("axis {axis} out of range for rank {}", t.rank()));
    }
    let outer: usize = t.shape[..axis].iter().product();
    let len = t.shape[axis];
    let inner: usize = t.shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for a in 0..len {
            let src = &t.data[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut shape: Vec<usize> = t.shape.clone();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(DenseTensor::from_parts_unchecked(shape, out))
}

// ---- slice kernels -------------------------------------------------------

/// `c[m×n] += a[m×k] · b[k×n]`. Zero entries of `a` are skipped, which makes
/// spike-driven inputs cheap without changing any nonzero partial sum.
pub fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, &b[kk * n..(kk + 1) * n], c_row);
        }
    }
}

/// `c[k×n] += aᵀ · b` for `a[m×k]`, `b[m×n]`; rows of `a` are visited in order.
pub fn gemm_at_b_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            axpy(av, b_row, &mut c[kk * n..(kk + 1) * n]);
        }
    }
}

/// `c[m×k] = a[m×n] · bᵀ` for `b[k×n]`.
pub fn gemm_a_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            c[i * k + kk] = dot(a_row, &b[kk * n..(kk + 1) * n]);
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Gathers one sample's receptive fields into `col[patch_len × out_h·out_w]`.
fn im2col(geo: &ConvShape, input: &[f64], col: &mut [f64]) {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let p = oh * ow;
    let pad = geo.padding as isize;
    for c in 0..geo.in_channels {
        let plane = &input[c * geo.in_h * geo.in_w..(c + 1) * geo.in_h * geo.in_w];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        dst[oy * ow + ox] =
                            if iy < 0 || ix < 0 || iy >= geo.in_h as isize || ix >= geo.in_w as isize {
                                0.0
                            } else {
                                plane[iy as usize * geo.in_w + ix as usize]
                            };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch-matrix gradient back onto one sample's input plane.
fn col2im_acc(geo: &ConvShape, col: &[f64], grad_in: &mut [f64]) {
    let (oh, ow) = (geo.out_h(), geo.out_w());
    let p = oh * ow;
    let pad = geo.padding as isize;
    for c in 0..geo.in_channels {
        let plane = &mut grad_in[c * geo.in_h * geo.in_w..(c + 1) * geo.in_h * geo.in_w];
        for ky in 0..geo.kh {
            for kx in 0..geo.kw {
                let row = (c * geo.kh + ky) * geo.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy < 0 || iy >= geo.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        if ix < 0 || ix >= geo.in_w as isize {
                            continue;
                        }
                        plane[iy as usize * geo.in_w + ix as usize] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation on flat buffers: `out[n] += kernel ⋆ input[n]`.
pub fn conv_forward(geo: &ConvShape, input: &[f64], kernel: &[f64], out: &mut [f64], n: usize) {
    let (in_sz, out_sz) = (geo.in_size(), geo.out_size());
    let p = geo.out_h() * geo.out_w();
    let q = geo.patch_len();
    let mut col = vec![0.0; q * p];
    for s in 0..n {
        im2col(geo, &input[s * in_sz..(s + 1) * in_sz], &mut col);
        gemm_acc(
            kernel,
            &col,
            &mut out[s * out_sz..(s + 1) * out_sz],
            geo.out_channels,
            q,
            p,
        );
    }
}

/// Accumulates the kernel gradient and, when requested, the input gradient of
/// a batched cross-correlation.
pub fn conv_backward(
    geo: &ConvShape,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_kernel: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
    n: usize,
) {
    let (in_sz, out_sz) = (geo.in_size(), geo.out_size());
    let p = geo.out_h() * geo.out_w();
    let q = geo.patch_len();
    let f = geo.out_channels;
    let mut col = vec![0.0; q * p];
    let mut gk = vec![0.0; f * q];
    let mut gcol = vec![0.0; q * p];
    for s in 0..n {
        let go = &grad_out[s * out_sz..(s + 1) * out_sz];
        im2col(geo, &input[s * in_sz..(s + 1) * in_sz], &mut col);
        gemm_a_bt(go, &col, &mut gk, f, p, q);
        for (acc, v) in grad_kernel.iter_mut().zip(&gk) {
            *acc += v;
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            gcol.iter_mut().for_each(|v| *v = 0.0);
            gemm_at_b_acc(kernel, go, &mut gcol, f, q, p);
            col2im_acc(geo, &gcol, &mut gi[s * in_sz..(s + 1) * in_sz]);
        }
    }
}

/// Number of output positions whose receptive field contains each input
/// position, per channel plane `[in_h × in_w]`. Boundary-exact.
pub fn conv_fan_out_map(geo: &ConvShape) -> Vec<usize> {
    let mut map = vec![0usize; geo.in_h * geo.in_w];
    let pad = geo.padding as isize;
    for oy in 0..geo.out_h() {
        for ox in 0..geo.out_w() {
            for ky in 0..geo.kh {
                let iy = (oy * geo.stride + ky) as isize - pad;
                if iy < 0 || iy >= geo.in_h as isize {
                    continue;
                }
                for kx in 0..geo.kw {
                    let ix = (ox * geo.stride + kx) as isize - pad;
                    if ix < 0 || ix >= geo.in_w as isize {
                        continue;
                    }
                    map[iy as usize * geo.in_w + ix as usize] += 1;
                }
            }
        }
    }
    map
}
