use std::collections::HashMap;

use super::{ScoreItem, Scorer, ScorerError};
use crate::numeric::{lit, Scalar};

/// Deterministic offline scorer: a character n-gram F-score turned into an
/// error value `scale_max * (1 - F)`.
///
/// Whitespace is removed before n-grams are taken. Precision and recall are
/// averaged over orders `1..=max_order` with equal weights and combined with
/// `F_beta`. The translation is compared with the item's reference when it
/// has one, otherwise with its source.
#[derive(Debug, Clone, Copy)]
pub struct OfflineScorer<T> {
    pub scale_max: T,
    pub max_order: usize,
    pub beta: T,
    pub batch_limit: usize,
}

impl<T: Scalar> Default for OfflineScorer<T> {
    fn default() -> Self {
        OfflineScorer {
            scale_max: lit(25.0),
            max_order: 6,
            beta: lit(2.0),
            batch_limit: 64,
        }
    }
}

impl<T: Scalar> OfflineScorer<T> {
    pub fn with_scale(scale_max: T) -> Self {
        OfflineScorer {
            scale_max,
            ..Self::default()
        }
    }

    pub fn pseudo_error(&self, hypothesis: &str, reference: &str) -> T {
        let f = char_ngram_fscore(hypothesis, reference, self.max_order, self.beta);
        self.scale_max * (T::one() - f)
    }
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score in `[0, 1]`.
///
/// Orders for which neither side has any n-gram are skipped; when no order
/// remains (both strings empty after whitespace removal) the texts are
/// identical and the score is 1.
pub fn char_ngram_fscore<T: Scalar>(hypothesis: &str, reference: &str, max_order: usize, beta: T) -> T {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let refr: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let mut p_sum = T::zero();
    let mut r_sum = T::zero();
    let mut orders = 0usize;
    for n in 1..=max_order {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&refr, n);
        let h_total: usize = h.values().sum();
        let r_total: usize = r.values().sum();
        if h_total == 0 && r_total == 0 {
            continue;
        }
        let matched: usize = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        orders += 1;
        if h_total > 0 {
            p_sum = p_sum + lit::<T>(matched as f64) / lit(h_total as f64);
        }
        if r_total > 0 {
            r_sum = r_sum + lit::<T>(matched as f64) / lit(r_total as f64);
        }
    }
    if orders == 0 {
        return T::one();
    }
    let k = lit::<T>(orders as f64);
    let (p, r) = (p_sum / k, r_sum / k);
    if p + r == T::zero() {
        return T::zero();
    }
    let b2 = beta * beta;
    (T::one() + b2) * p * r / (b2 * p + r)
}

impl<T: Scalar> Scorer<T> for OfflineScorer<T> {
    fn scale_max(&self) -> T {
        self.scale_max
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn model_id(&self) -> String {
        format!("offline-chrf{}-beta{:?}", self.max_order, self.beta)
    }

    fn wants_reference(&self) -> bool {
        true
    }

    fn score_batch(&self, items: &[ScoreItem]) -> Result<Vec<T>, ScorerError> {
        Ok(items
            .iter()
            .map(|it| {
                let cmp = it.reference.as_deref().unwrap_or(&it.source);
                self.pseudo_error(&it.translation, cmp)
            })
            .collect())
    }
}
