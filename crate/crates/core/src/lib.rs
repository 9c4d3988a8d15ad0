//! Retrieval-augmented ensemble for multi-label emotion detection.
//!
//! A query is answered in four steps: the most similar labeled training
//! examples are retrieved ([`retrieval`]), rendered as few-shot chat
//! messages ([`prompting`]), sent to a pool of generator backends
//! ([`generators`]), and the per-model label vectors are combined into one
//! decision ([`aggregation`]). [`evaluation`] scores predictions and picks
//! the best strategy per language on dev data; [`pipeline`] runs the whole
//! thing over a batch and records full provenance.
//!
//! Scores, weights and metrics are generic over [`Scalar`]; the aliases
//! below fix them to `f64`, which is what the pipeline and CLI use.

pub mod aggregation;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod generators;
pub mod labels;
mod parallel;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod scalar;

pub use aggregation::{Aggregated, StrategyId};
pub use corpus::{Corpus, LabeledExample, Split};
pub use labels::{EmotionLabel, LabelVector};
pub use prompting::{ParseOutcome, ParseStatus, PromptBundle};
pub use generators::ModelPrediction;
pub use scalar::{Exact, Scalar};

pub type WeightTable = aggregation::WeightTable<f64>;
pub type ModelWeights = aggregation::ModelWeights<f64>;
pub type EvalReport = evaluation::EvalReport<f64>;
pub type Candidate = evaluation::Candidate<f64>;
pub type SummaryReport = evaluation::SummaryReport<f64>;
pub type LanguageRow = evaluation::LanguageRow<f64>;
pub type RetrievalResult = retrieval::RetrievalResult<f64>;
pub type EmbeddingIndex = retrieval::EmbeddingIndex<f64>;
