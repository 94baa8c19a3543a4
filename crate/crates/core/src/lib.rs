//! Document-level multi-modal retrieval.
//!
//! Curates text + image documents, learns a late-fusion document vector from
//! precomputed embeddings, and ranks documents against queries.

pub mod annotate;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FusionParamsF32 = fusion::FusionParams<f32>;
pub type FusionParamsF64 = fusion::FusionParams<f64>;
pub type MlpHeadF32 = fusion::MlpHead<f32>;
pub type MlpHeadF64 = fusion::MlpHead<f64>;
pub type SquareMatrixF32 = train::SquareMatrix<f32>;
pub type SquareMatrixF64 = train::SquareMatrix<f64>;
pub type TrainingBatchF32 = train::TrainingBatch<f32>;
pub type TrainingBatchF64 = train::TrainingBatch<f64>;
