//! Segment-level quality scoring on an error scale (lower is better) and
//! document-level aggregation.
//!
//! Two scorers sit behind the [`Scorer`] trait: [`OfflineScorer`], a
//! deterministic character n-gram stand-in for desk-scale runs, and
//! [`RemoteScorer`], the client of the metric scoring service.

mod offline;
mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use offline::{char_ngram_fscore, OfflineScorer};
pub use remote::{HealthStatus, RemoteScorer, ScoreMode};

use crate::corpus::SourceDocument;
use crate::error::{Error, Result};
use crate::numeric::{mean, Scalar};
use crate::pipeline::{RefinementTrajectory, StepKind};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer {endpoint} unreachable: {message}")]
    Transport { endpoint: String, message: String },
    #[error("scorer {endpoint} protocol error: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("scorer returned {got} scores for {expected} items")]
    CountMismatch { expected: usize, got: usize },
    #[error("score {value} outside [0, {scale_max}]")]
    OutOfRange { value: f64, scale_max: f64 },
}

/// An error-scale score in `[0, scale_max]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QualityScore<T> {
    pub value: T,
    pub scale_max: T,
}

impl<T: Scalar> QualityScore<T> {
    pub fn new(value: T, scale_max: T) -> std::result::Result<Self, ScorerError> {
        if scale_max.is_nan() || scale_max <= T::zero() || !value.is_finite() || value < T::zero() || value > scale_max {
            return Err(ScorerError::OutOfRange {
                value: value.to_f64().unwrap_or(f64::NAN),
                scale_max: scale_max.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(QualityScore { value, scale_max })
    }
}

/// One (source, translation) pair to score; `reference` is the comparison
/// text for scorers that need one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub source: String,
    pub translation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

pub trait Scorer<T: Scalar>: Send + Sync {
    fn scale_max(&self) -> T;
    /// Largest batch accepted by one call to [`Scorer::score_batch`].
    fn batch_limit(&self) -> usize;
    fn model_id(&self) -> String;
    /// Whether the scorer compares against a reference text rather than
    /// judging the translation from the source alone.
    fn wants_reference(&self) -> bool;
    fn score_batch(&self, items: &[ScoreItem]) -> std::result::Result<Vec<T>, ScorerError>;
}

/// Scores aligned segments one by one, preserving order. Calls the scorer
/// in chunks of at most its batch limit.
pub fn score_segments<T: Scalar, S: Scorer<T> + ?Sized>(
    source: &[String],
    translation: &[String],
    reference: Option<&[String]>,
    scorer: &S,
) -> Result<Vec<QualityScore<T>>> {
    if source.len() != translation.len() {
        return Err(Error::precondition(format!(
            "{} source segments but {} translation segments",
            source.len(),
            translation.len()
        )));
    }
    if let Some(r) = reference {
        if r.len() != source.len() {
            return Err(Error::precondition(format!(
                "{} source segments but {} reference segments",
                source.len(),
                r.len()
            )));
        }
    }
    let items: Vec<ScoreItem> = source
        .iter()
        .zip(translation)
        .enumerate()
        .map(|(i, (s, t))| ScoreItem {
            source: s.clone(),
            translation: t.clone(),
            reference: reference.map(|r| r[i].clone()),
        })
        .collect();
    let scale_max = scorer.scale_max();
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(scorer.batch_limit().max(1)) {
        let values = scorer.score_batch(chunk)?;
        if values.len() != chunk.len() {
            return Err(ScorerError::CountMismatch {
                expected: chunk.len(),
                got: values.len(),
            }
            .into());
        }
        for v in values {
            out.push(QualityScore::new(v, scale_max)?);
        }
    }
    Ok(out)
}

/// Document score: arithmetic mean of the segment scores.
pub fn doc_score<T: Scalar>(scores: &[QualityScore<T>]) -> Result<T> {
    let values: Vec<T> = scores.iter().map(|s| s.value).collect();
    mean(&values).ok_or_else(|| Error::precondition("doc_score of an empty score list"))
}

/// How much `to` improves on `from`. Positive when `to` is better.
pub fn improvement<T: Scalar>(from: T, to: T) -> T {
    from - to
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentScore<'a, T> {
    pub document_id: &'a str,
    pub step: StepKind,
    pub index: usize,
    pub score: QualityScore<T>,
}

/// Per-step segment scores of one trajectory and their document means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory<T> {
    pub document_id: String,
    pub scale_max: T,
    pub segment_scores: BTreeMap<StepKind, Vec<T>>,
    pub doc_score: BTreeMap<StepKind, T>,
}

impl<T: Scalar> ScoredTrajectory<T> {
    /// Builds a scored trajectory from raw per-step segment scores,
    /// computing document means.
    pub fn from_segments(
        document_id: impl Into<String>,
        scale_max: T,
        segment_scores: BTreeMap<StepKind, Vec<T>>,
    ) -> Result<Self> {
        let mut doc = BTreeMap::new();
        for (step, values) in &segment_scores {
            let m = mean(values).ok_or_else(|| {
                Error::precondition(format!("no segment scores for step {step}"))
            })?;
            doc.insert(*step, m);
        }
        Ok(ScoredTrajectory {
            document_id: document_id.into(),
            scale_max,
            segment_scores,
            doc_score: doc,
        })
    }

    pub fn segments(&self, step: StepKind) -> Option<&[T]> {
        self.segment_scores.get(&step).map(Vec::as_slice)
    }

    pub fn segment_count(&self) -> usize {
        self.segment_scores.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn iter_segment_scores(&self) -> impl Iterator<Item = SegmentScore<'_, T>> + '_ {
        self.segment_scores.iter().flat_map(move |(step, values)| {
            values.iter().enumerate().map(move |(index, &v)| SegmentScore {
                document_id: &self.document_id,
                step: *step,
                index,
                score: QualityScore {
                    value: v,
                    scale_max: self.scale_max,
                },
            })
        })
    }

    /// One store record per step.
    pub fn to_records(&self) -> Vec<ScoreRecord<T>> {
        self.segment_scores
            .iter()
            .map(|(step, scores)| ScoreRecord {
                document_id: self.document_id.clone(),
                step: *step,
                scores: scores.clone(),
                doc_score: self.doc_score[step],
                scale_max: self.scale_max,
            })
            .collect()
    }

    /// Regroups store records by document, in first-seen order.
    pub fn from_records(records: &[ScoreRecord<T>]) -> Result<Vec<Self>> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: BTreeMap<String, (T, BTreeMap<StepKind, Vec<T>>)> = BTreeMap::new();
        for r in records {
            let entry = grouped.entry(r.document_id.clone()).or_insert_with(|| {
                order.push(r.document_id.clone());
                (r.scale_max, BTreeMap::new())
            });
            entry.1.insert(r.step, r.scores.clone());
        }
        order
            .into_iter()
            .map(|id| {
                let (scale, steps) = grouped.remove(&id).expect("grouped id");
                ScoredTrajectory::from_segments(id, scale, steps)
            })
            .collect()
    }
}

/// Score store line: `{document_id, step, scores, doc_score, scale_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord<T> {
    pub document_id: String,
    pub step: StepKind,
    pub scores: Vec<T>,
    pub doc_score: T,
    pub scale_max: T,
}

/// Scores every step of a usable trajectory segment by segment.
///
/// Reference-free scorers see `(source, step translation)`. Scorers that
/// want a comparison text get the Final-step segment as pseudo-reference.
pub fn score_trajectory<T: Scalar, S: Scorer<T> + ?Sized>(
    doc: &SourceDocument,
    trajectory: &RefinementTrajectory,
    scorer: &S,
) -> Result<ScoredTrajectory<T>> {
    trajectory.ensure_usable_for(doc)?;
    let final_segments = trajectory
        .step_segments(StepKind::Final)
        .ok_or_else(|| Error::precondition("trajectory has no final step"))?;
    let reference = scorer.wants_reference().then_some(final_segments.as_slice());
    let mut per_step = BTreeMap::new();
    for step in StepKind::ALL {
        let segments = trajectory
            .step_segments(step)
            .ok_or_else(|| Error::precondition(format!("trajectory has no {step} step")))?;
        let scores = score_segments(&doc.segments, &segments, reference, scorer)?;
        per_step.insert(step, scores.into_iter().map(|s| s.value).collect());
    }
    ScoredTrajectory::from_segments(doc.id.clone(), scorer.scale_max(), per_step)
}
