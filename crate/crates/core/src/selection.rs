//! Quality-based filtering of scored trajectories.
//!
//! A document is kept when its Final step improves on its Draft by at least
//! the document threshold. A segment is challenging when its Adequacy or
//! Fluency step improves on its Draft by at least the segment threshold.
//! Scores are on an error scale, so improvement = draft - later step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{lit, Scalar};
use crate::pipeline::StepKind;
use crate::scoring::{improvement, ScoredTrajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig<T> {
    pub doc_threshold: T,
    pub seg_threshold: T,
    /// `true` compares with `>=`, `false` with `>`.
    pub inclusive: bool,
}

impl<T: Scalar> Default for SelectionConfig<T> {
    fn default() -> Self {
        SelectionConfig {
            doc_threshold: lit(0.5),
            seg_threshold: lit(1.0),
            inclusive: true,
        }
    }
}

impl<T: Scalar> SelectionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |t: T| !t.is_nan() && t > T::zero();
        if !positive(self.doc_threshold) || !positive(self.seg_threshold) {
            return Err(Error::invalid("selection config", "thresholds must be positive"));
        }
        Ok(())
    }

    fn clears(&self, gain: T, threshold: T) -> bool {
        if self.inclusive {
            gain >= threshold
        } else {
            gain > threshold
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengingSegment<T> {
    pub index: usize,
    /// Adequacy or Fluency.
    pub step: StepKind,
    pub improvement: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVerdict<T> {
    pub document_id: String,
    pub kept: bool,
    pub doc_improvement: T,
    /// Sorted by segment index, then step.
    pub challenging: Vec<ChallengingSegment<T>>,
}

impl<T: Scalar> SelectionVerdict<T> {
    /// Indices challenging for `step`, ascending.
    pub fn challenging_for(&self, step: StepKind) -> Vec<usize> {
        self.challenging
            .iter()
            .filter(|c| c.step == step)
            .map(|c| c.index)
            .collect()
    }
}

fn doc_step<T: Scalar>(st: &ScoredTrajectory<T>, step: StepKind) -> Result<T> {
    st.doc_score.get(&step).copied().ok_or_else(|| {
        Error::precondition(format!("{}: no {step} document score", st.document_id))
    })
}

/// Applies the document rule. The verdict's challenging list is empty; see
/// [`evaluate`] for the combined verdict.
pub fn select_document<T: Scalar>(st: &ScoredTrajectory<T>, cfg: &SelectionConfig<T>) -> Result<SelectionVerdict<T>> {
    let draft = doc_step(st, StepKind::Draft)?;
    let final_score = doc_step(st, StepKind::Final)?;
    let gain = improvement(draft, final_score);
    Ok(SelectionVerdict {
        document_id: st.document_id.clone(),
        kept: cfg.clears(gain, cfg.doc_threshold),
        doc_improvement: gain,
        challenging: Vec::new(),
    })
}

/// Segments whose Adequacy or Fluency step clears the segment threshold.
/// A segment clearing it with both steps yields one entry per step.
pub fn find_challenging<T: Scalar>(
    st: &ScoredTrajectory<T>,
    cfg: &SelectionConfig<T>,
) -> Result<Vec<ChallengingSegment<T>>> {
    let get = |step: StepKind| {
        st.segments(step).ok_or_else(|| {
            Error::precondition(format!("{}: no {step} segment scores", st.document_id))
        })
    };
    let draft = get(StepKind::Draft)?;
    let adequacy = get(StepKind::Adequacy)?;
    let fluency = get(StepKind::Fluency)?;
    if adequacy.len() != draft.len() || fluency.len() != draft.len() {
        return Err(Error::precondition(format!(
            "{}: segment counts differ across steps ({} / {} / {})",
            st.document_id,
            draft.len(),
            adequacy.len(),
            fluency.len()
        )));
    }
    let mut out = Vec::new();
    for i in 0..draft.len() {
        for (step, scores) in [(StepKind::Adequacy, adequacy), (StepKind::Fluency, fluency)] {
            let gain = improvement(draft[i], scores[i]);
            if cfg.clears(gain, cfg.seg_threshold) {
                out.push(ChallengingSegment {
                    index: i,
                    step,
                    improvement: gain,
                });
            }
        }
    }
    Ok(out)
}

/// Document rule plus challenging segments.
pub fn evaluate<T: Scalar>(st: &ScoredTrajectory<T>, cfg: &SelectionConfig<T>) -> Result<SelectionVerdict<T>> {
    let mut v = select_document(st, cfg)?;
    v.challenging = find_challenging(st, cfg)?;
    Ok(v)
}

/// Fraction of verdicts kept, `None` when there are none.
pub fn retention<T: Scalar>(verdicts: &[SelectionVerdict<T>]) -> Option<T> {
    if verdicts.is_empty() {
        return None;
    }
    let kept = verdicts.iter().filter(|v| v.kept).count();
    Some(lit::<T>(kept as f64) / lit(verdicts.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn scored(steps: [(StepKind, Vec<f64>); 4]) -> ScoredTrajectory<f64> {
        ScoredTrajectory::from_segments("d", 25.0, steps.into_iter().collect::<BTreeMap<_, _>>()).unwrap()
    }

    fn one_segment(d: f64, a: f64, f: f64, fin: f64) -> ScoredTrajectory<f64> {
        scored([
            (StepKind::Draft, vec![d]),
            (StepKind::Adequacy, vec![a]),
            (StepKind::Fluency, vec![f]),
            (StepKind::Final, vec![fin]),
        ])
    }

    #[test]
    fn half_point_improvement_is_kept_inclusively() {
        let cfg = SelectionConfig::default();
        let v = select_document(&one_segment(12.0, 12.0, 12.0, 11.5), &cfg).unwrap();
        assert_eq!(v.doc_improvement, 0.5);
        assert!(v.kept);
        let strict = SelectionConfig {
            inclusive: false,
            ..cfg
        };
        assert!(!select_document(&one_segment(12.0, 12.0, 12.0, 11.5), &strict).unwrap().kept);
    }

    #[test]
    fn no_improvement_is_rejected() {
        let v = select_document(&one_segment(10.0, 10.0, 10.0, 10.0), &SelectionConfig::default()).unwrap();
        assert_eq!(v.doc_improvement, 0.0);
        assert!(!v.kept);
    }

    #[test]
    fn challenging_via_adequacy() {
        let c = find_challenging(&one_segment(5.0, 3.9, 4.6, 4.0), &SelectionConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].step, StepKind::Adequacy);
        assert!((c[0].improvement - 1.1).abs() < 1e-12);
    }

    #[test]
    fn not_challenging_without_gain() {
        let c = find_challenging(&one_segment(5.0, 5.0, 5.0, 5.0), &SelectionConfig::default()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn challenging_for_both_steps() {
        let c = find_challenging(&one_segment(6.0, 4.9, 4.8, 4.0), &SelectionConfig::default()).unwrap();
        assert_eq!(
            c.iter().map(|x| x.step).collect::<Vec<_>>(),
            vec![StepKind::Adequacy, StepKind::Fluency]
        );
        assert!((c[0].improvement - 1.1).abs() < 1e-12);
        assert!((c[1].improvement - 1.2).abs() < 1e-12);
    }

    #[test]
    fn missing_steps_are_precondition_errors() {
        let mut m = BTreeMap::new();
        m.insert(StepKind::Draft, vec![1.0]);
        let st = ScoredTrajectory::from_segments("d", 25.0, m).unwrap();
        assert!(select_document(&st, &SelectionConfig::default()).is_err());
        assert!(find_challenging(&st, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn mismatched_segment_counts_are_rejected() {
        let st = scored([
            (StepKind::Draft, vec![1.0, 2.0]),
            (StepKind::Adequacy, vec![1.0]),
            (StepKind::Fluency, vec![1.0, 2.0]),
            (StepKind::Final, vec![1.0, 2.0]),
        ]);
        assert!(matches!(find_challenging(&st, &SelectionConfig::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn thresholds_must_be_positive() {
        let cfg = SelectionConfig {
            doc_threshold: 0.0,
            ..SelectionConfig::<f64>::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn retention_fraction() {
        let st = one_segment(12.0, 12.0, 12.0, 11.0);
        let keep = evaluate(&st, &SelectionConfig::default()).unwrap();
        let drop = evaluate(&one_segment(1.0, 1.0, 1.0, 1.0), &SelectionConfig::default()).unwrap();
        assert_eq!(retention(&[keep, drop]), Some(0.5));
        assert_eq!(retention::<f64>(&[]), None);
    }
}
