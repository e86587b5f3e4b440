//! Dense tensors, small MLPs, Adam and the logistic loss.
//!
//! Everything is `f64` and row-major. Networks are small (tens of units per
//! layer), so the kernels are plain loops written to auto-vectorise rather
//! than anything blocked or threaded.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, max_relative_gradient_error};
pub use mlp::{Activation, Dense, DenseGrad, ForwardCache, Mlp, MlpGrads, OutputTransform};

use crate::error::{Error, Result};

/// A shaped, finite, row-major array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!(
                "tensor shape {shape:?} must be non-empty and positive"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Config(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!("tensor entry {i} is not finite")));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing axis.
    pub fn row_len(&self) -> usize {
        *self.shape.last().expect("shape is non-empty")
    }

    /// Number of rows when viewed as `[rows, row_len]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.row_len()
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a logit. Returns `(loss, dloss/dlogit)`.
///
/// Labels other than 0 and 1 are a caller bug; in debug builds they panic.
pub fn logistic_loss(logit: f64, label: u8) -> (f64, f64) {
    debug_assert!(label <= 1, "label must be 0 or 1");
    let y = f64::from(label);
    // -[y ln s(z) + (1-y) ln(1-s(z))] = softplus(z) - y z
    let loss = softplus(logit) - y * logit;
    (loss.max(0.0), sigmoid(logit) - y)
}

/// In-place softmax over one row. Returns the log-sum-exp.
pub fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// Four-accumulator dot product; the split lets LLVM vectorise the reduction.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
