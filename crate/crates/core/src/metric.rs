//! Vector- and sequence-level distances: cosine, chordal and the
//! max-over-positions product metric used by DDR.
//!
//! All reductions accumulate in `f64` whatever the component type.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("embedding vector must have at least one component")]
    EmptyVector,
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("the {operand} vector has zero norm")]
    ZeroNorm { operand: Operand },
    #[error("token sequence must contain at least one vector")]
    EmptySequence,
    #[error("sequence vector {position} has dimension {found}, expected {expected}")]
    MixedDimensions {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("sequence length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("at position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<MetricError>,
    },
}

/// Which argument of a binary operation an error refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Left,
    Right,
}

impl std::fmt::Display for Operand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Operand::Left => "left",
            Operand::Right => "right",
        })
    }
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    components: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(components: Vec<T>) -> Result<Self, MetricError> {
        if components.is_empty() {
            return Err(MetricError::EmptyVector);
        }
        if let Some(index) = components.iter().position(|c| !c.is_finite()) {
            return Err(MetricError::NonFinite { index });
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.components
    }

    pub fn into_inner(self) -> Vec<T> {
        self.components
    }

    /// Squared Euclidean norm, accumulated in `f64`.
    pub fn norm_squared(&self) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let c = c.widen();
                c * c
            })
            .sum()
    }

    /// Whether the two vectors hold bit-identical components.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && self
                .components
                .iter()
                .zip(&other.components)
                .all(|(a, b)| a.bits() == b.bits())
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for EmbeddingVector<T> {
    type Error = MetricError;

    fn try_from(components: Vec<T>) -> Result<Self, Self::Error> {
        Self::new(components)
    }
}

/// Token vectors of one text, all sharing a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence<T> {
    vectors: Vec<EmbeddingVector<T>>,
}

impl<T: Scalar> TokenEmbeddingSequence<T> {
    pub fn new(vectors: Vec<EmbeddingVector<T>>) -> Result<Self, MetricError> {
        let expected = vectors.first().ok_or(MetricError::EmptySequence)?.dim();
        if let Some((position, v)) = vectors
            .iter()
            .enumerate()
            .find(|(_, v)| v.dim() != expected)
        {
            return Err(MetricError::MixedDimensions {
                position,
                expected,
                found: v.dim(),
            });
        }
        Ok(Self { vectors })
    }

    /// Builds a sequence from row-major data of `rows × dim` values.
    pub fn from_rows(data: &[T], dim: usize) -> Result<Self, MetricError> {
        if dim == 0 {
            return Err(MetricError::EmptyVector);
        }
        if data.is_empty() {
            return Err(MetricError::EmptySequence);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(MetricError::DimensionMismatch {
                left: data.len(),
                right: dim,
            });
        }
        let vectors = data
            .chunks_exact(dim)
            .enumerate()
            .map(|(position, row)| {
                EmbeddingVector::new(row.to_vec()).map_err(|e| MetricError::AtPosition {
                    position,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vectors)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].dim()
    }

    pub fn vectors(&self) -> &[EmbeddingVector<T>] {
        &self.vectors
    }

    pub fn get(&self, position: usize) -> Option<&EmbeddingVector<T>> {
        self.vectors.get(position)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingVector<T>> {
        self.vectors.iter()
    }
}

fn check_dims<T: Scalar>(
    u: &EmbeddingVector<T>,
    v: &EmbeddingVector<T>,
) -> Result<(), MetricError> {
    if u.dim() != v.dim() {
        return Err(MetricError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    Ok(())
}

/// `(u·v) / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(
    u: &EmbeddingVector<T>,
    v: &EmbeddingVector<T>,
) -> Result<f64, MetricError> {
    check_dims(u, v)?;
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in u.as_slice().iter().zip(v.as_slice()) {
        let (a, b) = (a.widen(), b.widen());
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 {
        return Err(MetricError::ZeroNorm {
            operand: Operand::Left,
        });
    }
    if vv == 0.0 {
        return Err(MetricError::ZeroNorm {
            operand: Operand::Right,
        });
    }
    // sqrt(uu * vv) rather than sqrt(uu) * sqrt(vv): for u == v the quotient
    // is then exactly 1, so identical inputs sit at distance exactly 0.
    let sim = dot / (uu * vv).sqrt();
    Ok(sim.clamp(-1.0, 1.0))
}

/// `1 − cosine_similarity(u, v)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(
    u: &EmbeddingVector<T>,
    v: &EmbeddingVector<T>,
) -> Result<f64, MetricError> {
    Ok(1.0 - cosine_similarity(u, v)?)
}

/// Euclidean distance between the projections of `u` and `v` onto the unit
/// sphere; equal to `sqrt(2(1 − cos))`.
///
/// Computed from the normalized difference rather than from the cosine:
/// `1 − cos` cancels catastrophically for nearly parallel vectors, which is
/// exactly the regime small substitutions live in.
pub fn chordal_distance<T: Scalar>(
    u: &EmbeddingVector<T>,
    v: &EmbeddingVector<T>,
) -> Result<f64, MetricError> {
    check_dims(u, v)?;
    let nu = u.norm_squared().sqrt();
    let nv = v.norm_squared().sqrt();
    if nu == 0.0 {
        return Err(MetricError::ZeroNorm {
            operand: Operand::Left,
        });
    }
    if nv == 0.0 {
        return Err(MetricError::ZeroNorm {
            operand: Operand::Right,
        });
    }
    let sq: f64 = u
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| {
            let d = a.widen() / nu - b.widen() / nv;
            d * d
        })
        .sum();
    Ok(sq.sqrt().min(2.0))
}

/// Max over positions of the chordal distance between aligned token vectors.
pub fn sequence_max_distance<T: Scalar>(
    x: &TokenEmbeddingSequence<T>,
    x2: &TokenEmbeddingSequence<T>,
) -> Result<f64, MetricError> {
    if x.len() != x2.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: x2.len(),
        });
    }
    x.iter()
        .zip(x2.iter())
        .enumerate()
        .try_fold(0.0f64, |acc, (position, (a, b))| {
            let d = chordal_distance(a, b).map_err(|e| MetricError::AtPosition {
                position,
                source: Box::new(e),
            })?;
            Ok(acc.max(d))
        })
}
