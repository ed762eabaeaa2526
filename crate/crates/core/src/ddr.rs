//! Distance-to-distance ratio and the two pooled cosine baselines.
//!
//! DDR compares two texts of equal token length by how far apart they are
//! before contextualization (embedding-layer vectors) relative to how far
//! apart they are afterwards (final hidden layer):
//!
//! ```text
//! DDR(t, t') = max_i chord(x_i, x'_i) / max_i chord(y_i, y'_i)
//! ```
//!
//! All three scores share one orientation: larger means more similar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::{
    cosine_similarity, sequence_max_distance, EmbeddingVector, MetricError, TokenEmbeddingSequence,
};
use crate::pooling::{centroid, PoolingError};
use crate::scalar::Scalar;

/// `d_out` values below this are treated as a collapsed transformation.
pub const DEGENERATE_OUTPUT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("token count mismatch: {left} vs {right}")]
    TokenCountMismatch { left: usize, right: usize },
    #[error("model tags differ: {left:?} vs {right:?}")]
    ModelMismatch { left: String, right: String },
    #[error("pre-context sequences are identical (d_in = 0); DDR is undefined")]
    IdenticalInputs,
    #[error("post-context distance {d_out:e} is below {DEGENERATE_OUTPUT_EPSILON:e} while d_in = {d_in}; degenerate transform")]
    DegenerateOutput { d_in: f64, d_out: f64 },
    #[error("invalid embedding pair: {0}")]
    InvalidPair(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pooling(#[from] PoolingError),
    #[error("{method}: {source}")]
    InMethod {
        method: Method,
        #[source]
        source: Box<ScoreError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ddr,
    CentroidCosine,
    EosCosine,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ddr, Method::CentroidCosine, Method::EosCosine];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ddr => "ddr",
            Method::CentroidCosine => "centroid_cosine",
            Method::EosCosine => "eos_cosine",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ddr" => Ok(Method::Ddr),
            "centroid_cosine" | "centroid" => Ok(Method::CentroidCosine),
            "eos_cosine" | "eos" => Ok(Method::EosCosine),
            other => Err(format!(
                "unknown method {other:?} (expected ddr, centroid_cosine or eos_cosine)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityScore {
    pub method: Method,
    pub value: f64,
}

/// One text's aligned pre-context and post-context token vectors.
///
/// `pre` and `post` may have different dimensions but always the same
/// length, `token_count`. The EOS vector lives in the post space and is not
/// part of `post`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair<T: Scalar> {
    pub text_id: String,
    pub pre: TokenEmbeddingSequence<T>,
    pub post: TokenEmbeddingSequence<T>,
    pub eos: EmbeddingVector<T>,
    pub model_tag: String,
}

impl<T: Scalar> EmbeddingPair<T> {
    pub fn new(
        text_id: impl Into<String>,
        pre: TokenEmbeddingSequence<T>,
        post: TokenEmbeddingSequence<T>,
        eos: EmbeddingVector<T>,
        model_tag: impl Into<String>,
    ) -> Result<Self, ScoreError> {
        if pre.len() != post.len() {
            return Err(ScoreError::InvalidPair(format!(
                "pre has {} tokens, post has {}",
                pre.len(),
                post.len()
            )));
        }
        if eos.dim() != post.dim() {
            return Err(ScoreError::InvalidPair(format!(
                "eos dimension {} differs from post dimension {}",
                eos.dim(),
                post.dim()
            )));
        }
        Ok(Self {
            text_id: text_id.into(),
            pre,
            post,
            eos,
            model_tag: model_tag.into(),
        })
    }

    pub fn token_count(&self) -> usize {
        self.pre.len()
    }
}

fn check_model<T: Scalar>(a: &EmbeddingPair<T>, b: &EmbeddingPair<T>) -> Result<(), ScoreError> {
    if a.model_tag != b.model_tag {
        return Err(ScoreError::ModelMismatch {
            left: a.model_tag.clone(),
            right: b.model_tag.clone(),
        });
    }
    Ok(())
}

/// `d_in / d_out` over the content positions (EOS excluded).
pub fn ddr_score<T: Scalar>(
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
) -> Result<SimilarityScore, ScoreError> {
    check_model(a, b)?;
    if a.token_count() != b.token_count() {
        return Err(ScoreError::TokenCountMismatch {
            left: a.token_count(),
            right: b.token_count(),
        });
    }
    let d_in = sequence_max_distance(&a.pre, &b.pre)?;
    if d_in == 0.0 {
        return Err(ScoreError::IdenticalInputs);
    }
    let d_out = sequence_max_distance(&a.post, &b.post)?;
    if d_out < DEGENERATE_OUTPUT_EPSILON {
        return Err(ScoreError::DegenerateOutput { d_in, d_out });
    }
    Ok(SimilarityScore {
        method: Method::Ddr,
        value: d_in / d_out,
    })
}

/// Which positions the centroid averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidSpan {
    /// The content positions only.
    #[default]
    Content,
    /// The content positions plus the EOS vector.
    ContentAndEos,
}

/// Cosine similarity of the two post-context centroids (EOS excluded).
pub fn centroid_cosine_score<T: Scalar>(
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
) -> Result<SimilarityScore, ScoreError> {
    centroid_cosine_score_with(a, b, CentroidSpan::Content)
}

pub fn centroid_cosine_score_with<T: Scalar>(
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
    span: CentroidSpan,
) -> Result<SimilarityScore, ScoreError> {
    check_model(a, b)?;
    let pool = |p: &EmbeddingPair<T>| match span {
        CentroidSpan::Content => centroid(&p.post),
        CentroidSpan::ContentAndEos => {
            let mut rows = p.post.vectors().to_vec();
            rows.push(p.eos.clone());
            centroid(&TokenEmbeddingSequence::new(rows)?)
        }
    };
    let (ca, cb) = (pool(a)?, pool(b)?);
    Ok(SimilarityScore {
        method: Method::CentroidCosine,
        value: cosine_similarity(ca.vector(), cb.vector())?,
    })
}

/// Cosine similarity of the two EOS vectors.
pub fn eos_cosine_score<T: Scalar>(
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
) -> Result<SimilarityScore, ScoreError> {
    check_model(a, b)?;
    Ok(SimilarityScore {
        method: Method::EosCosine,
        value: cosine_similarity(&a.eos, &b.eos)?,
    })
}

pub fn score<T: Scalar>(
    method: Method,
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
) -> Result<SimilarityScore, ScoreError> {
    score_with(method, a, b, CentroidSpan::Content)
}

/// [`score`] with an explicit centroid convention.
pub fn score_with<T: Scalar>(
    method: Method,
    a: &EmbeddingPair<T>,
    b: &EmbeddingPair<T>,
    span: CentroidSpan,
) -> Result<SimilarityScore, ScoreError> {
    let result = match method {
        Method::Ddr => ddr_score(a, b),
        Method::CentroidCosine => centroid_cosine_score_with(a, b, span),
        Method::EosCosine => eos_cosine_score(a, b),
    };
    result.map_err(|e| ScoreError::InMethod {
        method,
        source: Box::new(e),
    })
}
