//! Training-corpus emission: (source, trace, target) triples serialized as
//! chat transcripts whose assistant turn carries the delimiter-encoded
//! trace followed by the target text.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LanguagePair, SourceDocument};
use crate::engines::{decode_thinking, encode_thinking, ThinkingDelimiters};
use crate::engines::{ChatMessage, Role};
use crate::error::{Error, Result};
use crate::evalharness::eval_instruction;
use crate::jsonl;
use crate::traces::{ReasoningTrace, TraceKind};

pub const DEFAULT_TOKEN_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub id: String,
    pub pair: LanguagePair,
    pub source_text: String,
    pub trace: ReasoningTrace,
    pub target_text: String,
    pub transcript: Vec<ChatMessage>,
}

/// Corpus line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub pair: LanguagePair,
    pub messages: Vec<ChatMessage>,
}

impl TrainingExample {
    /// User turn: translation request for the pair followed by the source
    /// document. Assistant turn: `open + trace + close + target`.
    pub fn new(doc: &SourceDocument, trace: ReasoningTrace, target_text: String, d: &ThinkingDelimiters) -> Result<Self> {
        if trace.document_id != doc.id {
            return Err(Error::precondition(format!(
                "trace for {} attached to document {}",
                trace.document_id, doc.id
            )));
        }
        let source_text = doc.text();
        let user = format!("{}\n\n{}", eval_instruction(&doc.pair)?, source_text);
        let assistant = encode_thinking(&trace.text, &target_text, d)?;
        Ok(TrainingExample {
            id: doc.id.clone(),
            pair: doc.pair.clone(),
            source_text,
            trace,
            target_text,
            transcript: vec![ChatMessage::user(user), ChatMessage::assistant(assistant)],
        })
    }

    pub fn record(&self) -> DatasetRecord {
        DatasetRecord {
            id: self.id.clone(),
            pair: self.pair.clone(),
            messages: self.transcript.clone(),
        }
    }

    /// Whitespace-token length of the whole transcript.
    pub fn token_count(&self) -> usize {
        self.transcript
            .iter()
            .map(|m| m.content.split_whitespace().count())
            .sum()
    }

    /// Whether the assistant turn decodes back to `(trace, target)`.
    pub fn round_trips(&self, d: &ThinkingDelimiters) -> bool {
        let Some(assistant) = self.transcript.iter().rev().find(|m| m.role == Role::Assistant) else {
            return false;
        };
        let (trace, target) = decode_thinking(&assistant.content, d);
        trace == self.trace.text && target == self.target_text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmitOptions {
    pub kind: TraceKind,
    pub seed: u64,
    /// Uniformly sampled subset size, `None` for everything.
    pub subset: Option<usize>,
    pub token_cap: usize,
    pub config_hash: String,
    /// Identity of the metric that scored the trajectories.
    pub scorer_model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: usize,
    pub per_pair: BTreeMap<String, usize>,
    pub trace_kind: TraceKind,
    pub seed: u64,
    pub config_hash: String,
    pub scorer_model: String,
    pub subset: Option<usize>,
    pub token_cap: usize,
    pub dropped_over_cap: usize,
    pub candidates: usize,
    pub total_tokens: usize,
}

/// Indices of a uniform `k`-subset of `0..n`, ascending.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Selects the examples to emit: drops those over the token cap, then
/// samples the subset. Fails listing every example that does not round-trip.
pub fn prepare<'a>(
    examples: &'a [TrainingExample],
    opts: &EmitOptions,
    d: &ThinkingDelimiters,
) -> Result<(Vec<&'a TrainingExample>, Manifest)> {
    let offenders: Vec<String> = examples
        .iter()
        .filter(|e| !e.round_trips(d))
        .map(|e| e.id.clone())
        .collect();
    if !offenders.is_empty() {
        return Err(Error::RoundTrip(offenders));
    }
    if let Some(e) = examples.iter().find(|e| e.trace.kind != opts.kind) {
        return Err(Error::precondition(format!(
            "example {} has a {} trace, expected {}",
            e.id, e.trace.kind, opts.kind
        )));
    }
    let within: Vec<&TrainingExample> = examples.iter().filter(|e| e.token_count() <= opts.token_cap).collect();
    let dropped = examples.len() - within.len();
    let chosen: Vec<&TrainingExample> = match opts.subset {
        Some(k) => sample_indices(within.len(), k, opts.seed)
            .into_iter()
            .map(|i| within[i])
            .collect(),
        None => within,
    };
    let manifest = Manifest {
        records: chosen.len(),
        per_pair: language_distribution(chosen.iter().map(|e| e.pair.key())),
        trace_kind: opts.kind,
        seed: opts.seed,
        config_hash: opts.config_hash.clone(),
        scorer_model: opts.scorer_model.clone(),
        subset: opts.subset,
        token_cap: opts.token_cap,
        dropped_over_cap: dropped,
        candidates: examples.len(),
        total_tokens: chosen.iter().map(|e| e.token_count()).sum(),
    };
    Ok((chosen, manifest))
}

/// Writes the corpus and its manifest. Nothing is written when any example
/// fails the round-trip check.
pub fn emit_dataset(
    examples: &[TrainingExample],
    opts: &EmitOptions,
    d: &ThinkingDelimiters,
    corpus_path: &Path,
    manifest_path: &Path,
) -> Result<Manifest> {
    let (chosen, manifest) = prepare(examples, opts, d)?;
    let records: Vec<DatasetRecord> = chosen.iter().map(|e| e.record()).collect();
    jsonl::write(corpus_path, &records)?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    jsonl::write_atomic(manifest_path, &json)?;
    Ok(manifest)
}

/// Decodes every record of an emitted corpus, returning ids that fail.
pub fn verify_corpus(records: &[DatasetRecord], d: &ThinkingDelimiters) -> Vec<String> {
    records
        .iter()
        .filter(|r| {
            let roles: Vec<Role> = r.messages.iter().map(|m| m.role).collect();
            let Some(a) = r.messages.iter().find(|m| m.role == Role::Assistant) else {
                return true;
            };
            roles != [Role::User, Role::Assistant] || encode_thinking_again(&a.content, d).as_deref() != Some(a.content.as_str())
        })
        .map(|r| r.id.clone())
        .collect()
}

fn encode_thinking_again(content: &str, d: &ThinkingDelimiters) -> Option<String> {
    if !content.starts_with(d.open.as_str()) {
        return None;
    }
    let (t, f) = decode_thinking(content, d);
    encode_thinking(&t, &f, d).ok()
}

/// Count per pair key.
pub fn language_distribution<I, S>(pairs: I) -> BTreeMap<String, usize>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut hist = BTreeMap::new();
    for p in pairs {
        *hist.entry(p.into()).or_insert(0) += 1;
    }
    hist
}

/// Keeps the `keep` largest entries (ties by key) and sums the rest into
/// "Other". Returned in descending count order.
pub fn group_tail(hist: &BTreeMap<String, usize>, keep: usize) -> Vec<(String, usize)> {
    let mut entries: Vec<(String, usize)> = hist.iter().map(|(k, v)| (k.clone(), *v)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    if entries.len() <= keep {
        return entries;
    }
    let other: usize = entries[keep..].iter().map(|e| e.1).sum();
    entries.truncate(keep);
    entries.push(("Other".into(), other));
    entries
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::build_direct_trace;
    use crate::traces::SentenceBank;
    use proptest::prelude::*;

    fn doc(id: &str, target: &str) -> SourceDocument {
        let region = if target == "fr" { "France" } else { "Germany" };
        let code = if target == "fr" { "fr_FR" } else { "de_DE" };
        SourceDocument::from_text(id, LanguagePair::new("en", target, region, code).unwrap(), "Hello.\nWorld.")
    }

    fn example(id: &str, target: &str) -> TrainingExample {
        let d = doc(id, target);
        let trace = build_direct_trace(id, &d.pair, &SentenceBank::standard(), 1).unwrap();
        TrainingExample::new(&d, trace, "Bonjour.\nMonde.".into(), &ThinkingDelimiters::default()).unwrap()
    }

    fn opts() -> EmitOptions {
        EmitOptions {
            kind: TraceKind::Direct,
            seed: 7,
            subset: None,
            token_cap: DEFAULT_TOKEN_CAP,
            config_hash: "h".into(),
            scorer_model: "m".into(),
        }
    }

    #[test]
    fn transcript_shape() {
        let e = example("a", "fr");
        assert_eq!(e.transcript[0].role, Role::User);
        assert!(e.transcript[0].content.ends_with("(fr_FR):\n\nHello.\nWorld."));
        assert!(e.transcript[1].content.starts_with("<think>"));
        assert!(e.transcript[1].content.ends_with("</think>Bonjour.\nMonde."));
        assert!(e.round_trips(&ThinkingDelimiters::default()));
    }

    #[test]
    fn emits_all_records_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ex = vec![example("a", "fr"), example("b", "fr"), example("c", "de")];
        let d = ThinkingDelimiters::default();
        let m = emit_dataset(&ex, &opts(), &d, &dir.path().join("c.jsonl"), &dir.path().join("m.json")).unwrap();
        assert_eq!(m.records, 3);
        assert_eq!(m.per_pair["en-fr"], 2);
        let back: Vec<DatasetRecord> = jsonl::read(&dir.path().join("c.jsonl")).unwrap();
        assert_eq!(back.len(), 3);
        assert!(verify_corpus(&back, &d).is_empty());
    }

    #[test]
    fn seeded_subset_is_stable() {
        let ex = vec![example("a", "fr"), example("b", "fr"), example("c", "de")];
        let o = EmitOptions {
            subset: Some(2),
            ..opts()
        };
        let d = ThinkingDelimiters::default();
        let ids = |v: Vec<&TrainingExample>| v.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        let a = ids(prepare(&ex, &o, &d).unwrap().0);
        let b = ids(prepare(&ex, &o, &d).unwrap().0);
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
    }

    #[test]
    fn token_cap_drops_long_examples() {
        let ex = vec![example("a", "fr")];
        let o = EmitOptions { token_cap: 3, ..opts() };
        let (chosen, m) = prepare(&ex, &o, &ThinkingDelimiters::default()).unwrap();
        assert!(chosen.is_empty());
        assert_eq!(m.dropped_over_cap, 1);
    }

    #[test]
    fn round_trip_failure_aborts_listing_offenders() {
        let mut bad = example("bad", "fr");
        bad.target_text = "something else".into();
        let ex = vec![example("a", "fr"), bad];
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c.jsonl");
        let err = emit_dataset(&ex, &opts(), &ThinkingDelimiters::default(), &out, &dir.path().join("m.json")).unwrap_err();
        assert!(matches!(err, Error::RoundTrip(ref ids) if ids == &vec!["bad".to_string()]));
        assert!(!out.exists());
    }

    #[test]
    fn distribution_examples() {
        let h = language_distribution(["en-fr", "en-fr", "en-de"]);
        assert_eq!(h, BTreeMap::from([("en-de".to_string(), 1), ("en-fr".to_string(), 2)]));
        assert!(language_distribution(Vec::<String>::new()).is_empty());
        let grouped = group_tail(&h, 1);
        assert_eq!(grouped, vec![("en-fr".to_string(), 2), ("Other".to_string(), 1)]);
    }

    proptest! {
        #[test]
        fn histogram_total_is_corpus_size(keys in proptest::collection::vec("[a-e]", 0..60)) {
            let h = language_distribution(keys.iter().cloned());
            prop_assert_eq!(h.values().sum::<usize>(), keys.len());
            let g = group_tail(&h, 2);
            prop_assert_eq!(g.iter().map(|e| e.1).sum::<usize>(), keys.len());
        }

        #[test]
        fn sample_is_sorted_unique_subset(n in 0usize..50, k in 0usize..60, seed in any::<u64>()) {
            let s = sample_indices(n, k, seed);
            prop_assert_eq!(s.len(), k.min(n));
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.iter().all(|&i| i < n));
        }
    }
}
