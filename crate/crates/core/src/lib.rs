//! Entity-focused passage retrieval.
//!
//! Sparse BM25 retrieval with entity-emphasized queries, oracle
//! critical-entity mining by summed-reciprocal-ranking gain, a trainable
//! dual-tower dense scorer with an entity-focus term, two-phase
//! retrieve-then-rerank inference, and a retrieval evaluation harness.

pub mod artifact;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod mining;
pub mod run;
pub mod scorer;
pub mod sparse;
pub mod synth;
pub mod text;
pub mod trainer;

pub use artifact::ArtifactMeta;
pub use config::RunConfig;
pub use corpus::{Entity, EntitySource, Passage, PassageMap, QueryExample};
pub use encoder::{EncoderModel, ModelConfig};
pub use error::{EfrError, Result};
pub use mining::{MiningConfig, TrainingInstance};
pub use scorer::{DenseIndex, QueryScorer, ScoreBreakdown};
pub use sparse::{Bm25Params, InvertedIndex, SparseHit};
pub use text::Normalizer;
pub use trainer::{OptimizerKind, TrainConfig};
