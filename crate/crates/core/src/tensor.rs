//! Dense `f64` tensors and the 2-D kernels used by the saliency pipeline.
//!
//! Activations use the `channels × height × width` convention. Data is stored
//! row-major with the last dimension fastest.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::shape(format!(
            "tensor rank must be 1..=4, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::shape(format!("zero extent in dims {dims:?}")));
    }
    Ok(dims.iter().product())
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(dims: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Builds a tensor from row-major data, rejecting length mismatches and
    /// non-finite values.
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_dims(dims)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    /// Same data under new dims with an equal element count.
    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(format!(
                "expected rank-3 tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// Row-major slice of one channel of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw().expect("channel() on non rank-3 tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A rank-2 tensor (`height × width`).
#[derive(Clone, PartialEq)]
pub struct Matrix(Tensor);

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.h(), self.w())?;
        f.debug_list().entries(self.rows()).finish()
    }
}

impl Matrix {
    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Tensor::zeros(&[h, w]).map(Matrix)
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Result<Self> {
        Tensor::filled(&[h, w], value).map(Matrix)
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::from_vec(&[h, w], data).map(Matrix)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != w) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::from_vec(h, w, data)
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::shape(format!(
                "matrix needs rank 2, got dims {:?}",
                t.dims()
            )));
        }
        Ok(Matrix(t))
    }

    pub fn h(&self) -> usize {
        self.0.dims[0]
    }

    pub fn w(&self) -> usize {
        self.0.dims[1]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h(), self.w())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.data[i * self.w() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let w = self.w();
        self.0.data[i * w + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.0.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.0.data.chunks(self.w())
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.max()
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }
}

/// Replicates every cell into a `factor × factor` block.
pub fn upsample_nearest(m: &Matrix, factor: usize) -> Result<Matrix> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be >= 1"));
    }
    let (h, w) = m.dims();
    let ow = w * factor;
    let mut out = Vec::with_capacity(h * factor * ow);
    for row in m.rows() {
        let start = out.len();
        for &v in row {
            out.extend(std::iter::repeat_n(v, factor));
        }
        for _ in 1..factor {
            out.extend_from_within(start..start + ow);
        }
    }
    Matrix::from_vec(h * factor, ow, out)
}

/// Corner-aligned bilinear resampling to a size at least as large as `m`.
pub fn upsample_bilinear(m: &Matrix, out_h: usize, out_w: usize) -> Result<Matrix> {
    let (h, w) = m.dims();
    if out_h < h || out_w < w {
        return Err(Error::invalid(format!(
            "bilinear upsample cannot shrink {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = m.get(y0, x0) * (1.0 - fx) + m.get(y0, x1) * fx;
            let bottom = m.get(y1, x0) * (1.0 - fx) + m.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Matrix::from_vec(out_h, out_w, out)
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "hadamard of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.h(), a.w(), data)
}

/// Divides by the maximum so the largest entry becomes exactly 1. An all-zero
/// matrix is returned unchanged.
pub fn normalize_max(m: &Matrix) -> Result<Matrix> {
    if let Some(v) = m.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::invalid(format!(
            "normalize_max needs non-negative entries, found {v}"
        )));
    }
    let max = m.max();
    if max == 0.0 {
        return Ok(m.clone());
    }
    let data = m.data().iter().map(|&v| v / max).collect();
    Matrix::from_vec(m.h(), m.w(), data)
}
