//! Core of the translation-reasoning pipeline: corpus ingestion, refinement
//! trajectories, quality scoring, selection, trace assembly, dataset
//! emission and evaluation.

pub mod analysis;
pub mod corpus;
pub mod datasetio;
pub mod digest;
pub mod engines;
pub mod error;
pub mod evalharness;
pub mod inject;
pub mod jsonl;
pub mod lang;
pub mod numeric;
pub mod pipeline;
pub mod scoring;
pub mod selection;
pub mod traces;

pub use corpus::{LanguagePair, SourceDocument};
pub use engines::{Engine, EngineConfig, EngineError, EngineOutput};
pub use error::{Error, Result};
pub use numeric::Scalar;
pub use pipeline::{RefinementTrajectory, StepKind};
pub use traces::{ReasoningTrace, SentenceBank, TraceKind};

pub type ScoredTrajectory = scoring::ScoredTrajectory<f64>;
pub type SelectionConfig = selection::SelectionConfig<f64>;
pub type SelectionVerdict = selection::SelectionVerdict<f64>;
pub type OfflineScorer = scoring::OfflineScorer<f64>;
pub type RemoteScorer = scoring::RemoteScorer<f64>;
pub type PathStats = analysis::PathStats<f64>;
pub type EvalTable = evalharness::EvalTable<f64>;
