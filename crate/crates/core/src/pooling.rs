//! Sequence pooling: centroid (mean) and end-of-sequence selection.

use std::borrow::Cow;

use thiserror::Error;

use crate::metric::{EmbeddingVector, MetricError, TokenEmbeddingSequence};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolingError {
    #[error("cannot pool an empty sequence")]
    EmptySequence,
    #[error("EOS index {index} out of range for a sequence of {len} vectors")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMethod {
    Centroid,
    Eos,
}

/// A single vector standing in for a whole sequence.
///
/// EOS pooling borrows the selected vector; centroid pooling owns its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledVector<'a, T: Scalar> {
    pub vector: Cow<'a, EmbeddingVector<T>>,
    pub method: PoolingMethod,
}

impl<T: Scalar> PooledVector<'_, T> {
    pub fn vector(&self) -> &EmbeddingVector<T> {
        &self.vector
    }
}

/// Componentwise mean of every vector in `x`.
pub fn centroid<T: Scalar>(
    x: &TokenEmbeddingSequence<T>,
) -> Result<PooledVector<'static, T>, PoolingError> {
    if x.is_empty() {
        return Err(PoolingError::EmptySequence);
    }
    let mut sums = vec![0.0f64; x.dim()];
    for v in x.iter() {
        for (acc, c) in sums.iter_mut().zip(v.as_slice()) {
            *acc += c.widen();
        }
    }
    let n = x.len() as f64;
    let mean = sums.into_iter().map(|s| T::narrow(s / n)).collect();
    Ok(PooledVector {
        vector: Cow::Owned(EmbeddingVector::new(mean)?),
        method: PoolingMethod::Centroid,
    })
}

/// The vector at `eos_index`, untouched.
pub fn eos_vector<T: Scalar>(
    x: &TokenEmbeddingSequence<T>,
    eos_index: usize,
) -> Result<PooledVector<'_, T>, PoolingError> {
    let vector = x.get(eos_index).ok_or(PoolingError::IndexOutOfRange {
        index: eos_index,
        len: x.len(),
    })?;
    Ok(PooledVector {
        vector: Cow::Borrowed(vector),
        method: PoolingMethod::Eos,
    })
}
