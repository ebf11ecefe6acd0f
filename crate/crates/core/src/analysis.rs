//! Reasoning-path counting over traces.
//!
//! A reasoning path is signalled by a cue word such as "Wait" or
//! "Alternatively". Counts are aggregated per model into mean and
//! population standard deviation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{lit, mean, population_std, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueLexicon {
    pub cues: Vec<String>,
    #[serde(default)]
    pub case_sensitive: bool,
    #[serde(default = "yes")]
    pub word_boundary: bool,
}

fn yes() -> bool {
    true
}

impl Default for CueLexicon {
    fn default() -> Self {
        CueLexicon {
            cues: vec!["Wait".into(), "Alternatively".into()],
            case_sensitive: false,
            word_boundary: true,
        }
    }
}

fn fold(c: char, case_sensitive: bool) -> char {
    if case_sensitive {
        return c;
    }
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

impl CueLexicon {
    pub fn validate(&self) -> Result<()> {
        if self.cues.is_empty() {
            return Err(Error::invalid("cue lexicon", "no cues"));
        }
        let mut seen = std::collections::HashSet::new();
        for cue in &self.cues {
            if cue.is_empty() {
                return Err(Error::invalid("cue lexicon", "empty cue"));
            }
            let key: String = cue.chars().map(|c| fold(c, self.case_sensitive)).collect();
            if !seen.insert(key) {
                return Err(Error::invalid("cue lexicon", format!("duplicate cue {cue:?}")));
            }
        }
        Ok(())
    }
}

/// Number of cue occurrences in `trace`.
///
/// With `word_boundary`, a match counts only when the characters right
/// before and after it are not letters.
pub fn count_paths(trace: &str, lex: &CueLexicon) -> usize {
    let text: Vec<char> = trace.chars().map(|c| fold(c, lex.case_sensitive)).collect();
    let mut total = 0;
    for cue in &lex.cues {
        let pat: Vec<char> = cue.chars().map(|c| fold(c, lex.case_sensitive)).collect();
        if pat.is_empty() || pat.len() > text.len() {
            continue;
        }
        for start in 0..=text.len() - pat.len() {
            if text[start..start + pat.len()] != pat[..] {
                continue;
            }
            if lex.word_boundary {
                let before = start.checked_sub(1).map(|i| text[i]);
                let after = text.get(start + pat.len());
                if before.is_some_and(char::is_alphabetic) || after.is_some_and(|c| c.is_alphabetic()) {
                    continue;
                }
            }
            total += 1;
        }
    }
    total
}

/// Counts for many traces, computed in parallel, order preserved.
pub fn count_all(traces: &[String], lex: &CueLexicon) -> Vec<usize> {
    traces.par_iter().map(|t| count_paths(t, lex)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStats<T> {
    pub model: String,
    pub mean: T,
    pub std: T,
    pub n_traces: usize,
}

/// Per-model mean and population standard deviation, ordered by model name.
pub fn aggregate_paths<T: Scalar>(groups: &BTreeMap<String, Vec<usize>>) -> Result<Vec<PathStats<T>>> {
    groups
        .iter()
        .map(|(model, counts)| {
            let xs: Vec<T> = counts.iter().map(|&c| lit(c as f64)).collect();
            let (Some(m), Some(s)) = (mean(&xs), population_std(&xs)) else {
                return Err(Error::precondition(format!("model {model} has no traces")));
            };
            Ok(PathStats {
                model: model.clone(),
                mean: m,
                std: s,
                n_traces: counts.len(),
            })
        })
        .collect()
}

/// Aligned-text table: model, mean, std, trace count.
pub fn render_path_table<T: Scalar>(stats: &[PathStats<T>]) -> String {
    let width = stats.iter().map(|s| s.model.len()).max().unwrap_or(0).max("Model".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "Model", "Avg", "Std", "Traces");
    for s in stats {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>8.3}  {:>8}",
            s.model,
            s.mean.to_f64().unwrap_or(f64::NAN),
            s.std.to_f64().unwrap_or(f64::NAN),
            s.n_traces
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_examples() {
        let lex = CueLexicon::default();
        assert_eq!(count_paths("", &lex), 0);
        assert_eq!(count_paths("Wait, maybe 'maison'. Alternatively, 'domicile'.", &lex), 2);
        assert_eq!(count_paths("He waited patiently.", &lex), 0);
        assert_eq!(count_paths("await", &lex), 0);
        assert_eq!(count_paths("wait... WAIT!", &lex), 2);
        assert_eq!(count_paths("wait_then", &lex), 1);
    }

    #[test]
    fn flags_change_matching() {
        let sensitive = CueLexicon {
            case_sensitive: true,
            ..CueLexicon::default()
        };
        assert_eq!(count_paths("wait, Wait", &sensitive), 1);
        let loose = CueLexicon {
            word_boundary: false,
            ..CueLexicon::default()
        };
        assert_eq!(count_paths("He waited.", &loose), 1);
    }

    #[test]
    fn lexicon_validation() {
        assert!(CueLexicon::default().validate().is_ok());
        let dup = CueLexicon {
            cues: vec!["Wait".into(), "wait".into()],
            ..CueLexicon::default()
        };
        assert!(dup.validate().is_err());
        let empty = CueLexicon {
            cues: vec![],
            ..CueLexicon::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn two_point_and_constant_stats() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![1, 2]);
        g.insert("b".to_string(), vec![3, 3, 3]);
        let s = aggregate_paths::<f64>(&g).unwrap();
        assert_eq!((s[0].mean, s[0].std, s[0].n_traces), (1.5, 0.5, 2));
        assert_eq!((s[1].mean, s[1].std), (3.0, 0.0));
        let table = render_path_table(&s);
        assert!(table.lines().nth(1).unwrap().starts_with("a "));
    }

    #[test]
    fn empty_group_is_an_error() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![]);
        assert!(aggregate_paths::<f64>(&g).is_err());
    }

    proptest! {
        #[test]
        fn doubling_doubles(s in "[a-zA-Z ,.]{0,40}") {
            let lex = CueLexicon::default();
            let one = count_paths(&s, &lex);
            prop_assert_eq!(count_paths(&format!("{s} {s}"), &lex), 2 * one);
        }

        #[test]
        fn concatenation_is_additive(a in "[a-zA-Z ,.]{0,30}", b in "[a-zA-Z ,.]{0,30}") {
            let lex = CueLexicon::default();
            let joined = count_paths(&format!("{a} {b}"), &lex);
            prop_assert_eq!(joined, count_paths(&a, &lex) + count_paths(&b, &lex));
        }
    }
}
