//! Dense row-major `f64` tensors and the handful of kernels the pruning
//! pipeline needs: matrix products, patch extraction, convolution, pooling.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// An n-dimensional row-major array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(dim_err!("zero-sized dimension in shape {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// A 2-D tensor from nested rows. Panics on ragged input.
    pub fn matrix(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
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

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.len() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    /// Sub-tensor `i` along the leading axis, as an owned tensor.
    pub fn slice_outer(&self, i: usize) -> DenseTensor {
        let shape = if self.ndim() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        DenseTensor {
            shape,
            data: self.row(i).to_vec(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of entries that are not exactly zero.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    pub(crate) fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(dim_err!("expected a 2-D tensor, got shape {:?}", self.shape)),
        }
    }

    pub(crate) fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(dim_err!("expected a 3-D tensor, got shape {:?}", self.shape)),
        }
    }

    pub(crate) fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(dim_err!("expected a 4-D tensor, got shape {:?}", self.shape)),
        }
    }
}

/// Matrix product `a · b` for `a: [m, k]`, `b: [k, n]`.
///
/// Every output entry is accumulated over `k` in increasing order starting
/// from `0.0`, so the result is bit-identical to the textbook triple loop.
/// The loop nest is `i, k, j` only so that the innermost loop is contiguous.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return Err(dim_err!(
            "matmul inner dimensions disagree: [{m}, {k}] x [{k2}, {n}]"
        ));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(&a.data, &b.data, &mut out, m, k, n);
    Ok(DenseTensor {
        shape: vec![m, n],
        data: out,
    })
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

/// Matrix-vector product `w · x` for `w: [m, k]` and a flat `x` of length `k`.
pub fn matvec(w: &DenseTensor, x: &[f64]) -> Result<Vec<f64>> {
    let [m, k] = w.dims2()?;
    if x.len() != k {
        return Err(dim_err!("matvec: [{m}, {k}] x [{}]", x.len()));
    }
    Ok((0..m)
        .map(|i| {
            w.row(i)
                .iter()
                .zip(x)
                .fold(0.0, |acc, (&wi, &xi)| acc + wi * xi)
        })
        .collect())
}

/// Receptive fields of a convolution, one row per output position.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    /// `[num_patches, channels * kh * kw]`, channel-major then row-major
    /// within the kernel window.
    pub patches: DenseTensor,
    pub source_shape: [usize; 3],
    pub kernel: [usize; 2],
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchMatrix {
    pub fn num_patches(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn channels(&self) -> usize {
        self.source_shape[0]
    }

    /// Entries per channel inside one patch row.
    pub fn window(&self) -> usize {
        self.kernel[0] * self.kernel[1]
    }
}

pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(dim_err!("stride must be positive"));
    }
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(dim_err!(
            "kernel {kernel} does not fit padded input {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Extracts zero-padded receptive fields of `input: [c, h, w]`.
pub fn im2col(
    input: &DenseTensor,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<PatchMatrix> {
    let [c, h, w] = input.dims3()?;
    let out_h = conv_output_size(h, kh, stride, padding)?;
    let out_w = conv_output_size(w, kw, stride, padding)?;
    let cols = c * kh * kw;
    let mut data = vec![0.0; out_h * out_w * cols];
    let src = input.data();
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &mut data[(oy * out_w + ox) * cols..(oy * out_w + ox + 1) * cols];
            for ch in 0..c {
                for ky in 0..kh {
                    let y = (oy * stride + ky) as isize - padding as isize;
                    for kx in 0..kw {
                        let x = (ox * stride + kx) as isize - padding as isize;
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            row[(ch * kh + ky) * kw + kx] =
                                src[(ch * h + y as usize) * w + x as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(PatchMatrix {
        patches: DenseTensor {
            shape: vec![out_h * out_w, cols],
            data,
        },
        source_shape: [c, h, w],
        kernel: [kh, kw],
        stride,
        padding,
        out_h,
        out_w,
    })
}

/// Scatter-adds patch rows back onto an input-shaped buffer (adjoint of
/// [`im2col`]).
pub fn col2im(cols: &DenseTensor, pm: &PatchMatrix) -> Result<DenseTensor> {
    let [c, h, w] = pm.source_shape;
    let [kh, kw] = pm.kernel;
    let width = c * kh * kw;
    if cols.shape() != [pm.num_patches(), width] {
        return Err(dim_err!(
            "col2im expects [{}, {width}], got {:?}",
            pm.num_patches(),
            cols.shape()
        ));
    }
    let mut out = vec![0.0; c * h * w];
    for oy in 0..pm.out_h {
        for ox in 0..pm.out_w {
            let row = cols.row(oy * pm.out_w + ox);
            for ch in 0..c {
                for ky in 0..kh {
                    let y = (oy * pm.stride + ky) as isize - pm.padding as isize;
                    for kx in 0..kw {
                        let x = (ox * pm.stride + kx) as isize - pm.padding as isize;
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            out[(ch * h + y as usize) * w + x as usize] +=
                                row[(ch * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
    DenseTensor::new(vec![c, h, w], out)
}

/// Cross-correlation of `input: [c, h, w]` with `weights: [f, c, kh, kw]`,
/// computed as `W_flat · patchesᵀ`.
pub fn conv2d(
    weights: &DenseTensor,
    input: &DenseTensor,
    stride: usize,
    padding: usize,
) -> Result<DenseTensor> {
    let [_, _, kh, kw] = weights.dims4()?;
    let pm = im2col(input, kh, kw, stride, padding)?;
    conv2d_patches(weights, &pm)
}

/// Convolution against an already extracted [`PatchMatrix`].
pub fn conv2d_patches(weights: &DenseTensor, pm: &PatchMatrix) -> Result<DenseTensor> {
    let [f, c, kh, kw] = weights.dims4()?;
    if c != pm.channels() || [kh, kw] != pm.kernel {
        return Err(dim_err!(
            "conv weights {:?} do not match input with {} channels and kernel {:?}",
            weights.shape(),
            pm.channels(),
            pm.kernel
        ));
    }
    let wflat = DenseTensor {
        shape: vec![f, c * kh * kw],
        data: weights.data.clone(),
    };
    let out = matmul(&wflat, &pm.patches.transpose()?)?;
    DenseTensor::new(vec![f, pm.out_h, pm.out_w], out.data)
}

pub fn relu(x: &DenseTensor) -> DenseTensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Non-overlapping or strided 2-D pooling on `[c, h, w]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Pooling output plus, for max pooling, the flat input index that won each
/// output cell (lower index on ties).
pub fn pool2d(
    x: &DenseTensor,
    kind: PoolKind,
    size: usize,
    stride: usize,
) -> Result<(DenseTensor, Vec<usize>)> {
    let [c, h, w] = x.dims3()?;
    let oh = conv_output_size(h, size, stride, 0)?;
    let ow = conv_output_size(w, size, stride, 0)?;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::new();
    let src = x.data();
    let norm = (size * size) as f64;
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                let mut sum = 0.0;
                for ky in 0..size {
                    for kx in 0..size {
                        let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        let v = src[idx];
                        sum += v;
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                match kind {
                    PoolKind::Max => {
                        out.push(best);
                        argmax.push(best_idx);
                    }
                    PoolKind::Avg => out.push(sum / norm),
                }
            }
        }
    }
    Ok((DenseTensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2d(x: &DenseTensor, size: usize, stride: usize) -> Result<DenseTensor> {
    pool2d(x, PoolKind::Max, size, stride).map(|(t, _)| t)
}

pub fn avgpool2d(x: &DenseTensor, size: usize, stride: usize) -> Result<DenseTensor> {
    pool2d(x, PoolKind::Avg, size, stride).map(|(t, _)| t)
}
