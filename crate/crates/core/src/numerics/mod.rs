//! Dense tensor primitives, statistics and curve fitting.
//!
//! Storage is `f32`; every reduction accumulates in `f64`.

mod fit;
pub mod kernels;
mod stats;
mod tensor;

pub use fit::{linear_fit, lm_fit_exponential, ExpFit, LinearFit, LmOptions};
pub use stats::{mean, pearson_corr, standard_error};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {left:?} x {right:?}")]
    DimensionMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("bad shape: {0}")]
    Shape(String),
    #[error("row {row} has no unmasked entries")]
    FullyMaskedRow { row: usize },
    #[error("correlation undefined: zero variance in {which}")]
    UndefinedCorrelation { which: &'static str },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Matrix product with fixed left-to-right accumulation over the inner dim.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(NumericsError::DimensionMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0f64; m * n];
    kernels::matmul_acc(&a.to_f64(), &b.to_f64(), &mut out, m, k, n);
    Tensor::from_f64(vec![m, n], &out)
}

/// Row-wise softmax of a square matrix.
///
/// With `causal`, entries above the diagonal are excluded and written as
/// exact zeros. `-inf` entries are mask sentinels; a row whose visible entries
/// are all sentinels is an error.
pub fn masked_softmax_rows(logits: &Tensor, causal: bool) -> Result<Tensor, NumericsError> {
    let (n, c) = logits.dims2()?;
    if n != c {
        return Err(NumericsError::Shape(format!(
            "softmax expects a square matrix, got {:?}",
            logits.shape()
        )));
    }
    let mut out = Vec::with_capacity(n * n);
    let mut row = vec![0.0f64; n];
    for i in 0..n {
        for (dst, &src) in row.iter_mut().zip(logits.row(i)) {
            *dst = f64::from(src);
        }
        let visible = if causal { i + 1 } else { n };
        if row[..visible].iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(NumericsError::InvalidInput(format!("non-finite logit in row {i}")));
        }
        if !kernels::softmax_prefix(&mut row, visible) {
            return Err(NumericsError::FullyMaskedRow { row: i });
        }
        out.extend(row.iter().map(|&v| v as f32));
    }
    Tensor::new(vec![n, n], out)
}
