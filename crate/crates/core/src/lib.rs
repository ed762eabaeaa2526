//! Distance-to-distance ratio (DDR) text similarity and the substitution
//! perturbation benchmark built around it.
//!
//! The geometric core ([`metric`], [`pooling`], [`ddr`]) is generic over the
//! embedding scalar; the aliases below fix it to `f32` (the corpus storage
//! type) or `f64`. Distances and scores are always accumulated and returned
//! in `f64`.

pub mod analysis;
pub mod corpus;
pub mod ddr;
pub mod experiment;
pub mod metric;
pub mod perturbation;
pub mod pooling;
pub mod scalar;
pub mod transport;

pub use ddr::{score, EmbeddingPair, Method, ScoreError, SimilarityScore};
pub use metric::{EmbeddingVector, MetricError, TokenEmbeddingSequence};
pub use perturbation::{Kind, Lexicon, SourceExcerpt, Variant};
pub use scalar::Scalar;

pub type EmbeddingVector32 = EmbeddingVector<f32>;
pub type EmbeddingVector64 = EmbeddingVector<f64>;
pub type TokenEmbeddingSequence32 = TokenEmbeddingSequence<f32>;
pub type TokenEmbeddingSequence64 = TokenEmbeddingSequence<f64>;
pub type EmbeddingPair32 = EmbeddingPair<f32>;
pub type EmbeddingPair64 = EmbeddingPair<f64>;
