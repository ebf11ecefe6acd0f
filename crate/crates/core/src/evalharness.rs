//! Evaluation: benchmark prompts, with/without-reasoning passes and
//! per-pair / average tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{content_id, LanguagePair};
use crate::engines::{ChatMessage, Engine, EngineOutput};
use crate::error::{Error, Result};
use crate::numeric::{lit, mean, Scalar};

/// Default evaluated pairs: English into these targets, with the region and
/// locale each prompt names.
pub const DEFAULT_TARGETS: [(&str, &str, &str); 9] = [
    ("ar", "Egypt", "ar_EG"),
    ("cs", "Czechia", "cs_CZ"),
    ("fa", "Iran", "fa_IR"),
    ("fr", "France", "fr_FR"),
    ("hi", "India", "hi_IN"),
    ("ja", "Japan", "ja_JP"),
    ("ko", "South Korea", "ko_KR"),
    ("ru", "Russia", "ru_RU"),
    ("zh", "China", "zh_CN"),
];

pub fn default_pairs() -> Vec<LanguagePair> {
    DEFAULT_TARGETS
        .iter()
        .map(|(t, region, code)| LanguagePair {
            source: "en".into(),
            target: (*t).into(),
            target_region: (*region).into(),
            target_code: (*code).into(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "EvalRecord", into = "EvalRecord")]
pub struct EvalItem {
    pub id: Option<String>,
    pub pair: LanguagePair,
    pub source: String,
    pub reference: Option<String>,
}

/// Items-file line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EvalRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    source_lang: String,
    target_lang: String,
    #[serde(default)]
    target_region: String,
    #[serde(default)]
    target_code: String,
}

impl TryFrom<EvalRecord> for EvalItem {
    type Error = String;

    fn try_from(r: EvalRecord) -> std::result::Result<Self, String> {
        if r.source.is_empty() {
            return Err("empty source".into());
        }
        Ok(EvalItem {
            id: r.id,
            pair: LanguagePair {
                source: r.source_lang,
                target: r.target_lang,
                target_region: r.target_region,
                target_code: r.target_code,
            },
            source: r.source,
            reference: r.reference,
        })
    }
}

impl From<EvalItem> for EvalRecord {
    fn from(i: EvalItem) -> Self {
        EvalRecord {
            id: i.id,
            source: i.source,
            reference: i.reference,
            source_lang: i.pair.source,
            target_lang: i.pair.target,
            target_region: i.pair.target_region,
            target_code: i.pair.target_code,
        }
    }
}

impl EvalItem {
    /// The item's id, or a content hash of its pair and source.
    pub fn key(&self) -> String {
        self.id
            .clone()
            .unwrap_or_else(|| content_id(&format!("{}\n{}", self.pair.key(), self.source)))
    }
}

/// Translation request text for one pair, without the source text.
pub fn eval_instruction(pair: &LanguagePair) -> Result<String> {
    if pair.target_region.trim().is_empty() || pair.target_code.trim().is_empty() {
        return Err(Error::Config(format!(
            "pair {} needs target_region and target_code",
            pair.key()
        )));
    }
    let src = pair.source_name()?;
    let tgt = pair.target_name()?;
    let (region, code) = (&pair.target_region, &pair.target_code);
    Ok(format!(
        "You are a professional {src} to {tgt} translator, tasked with providing translations suitable for use in {region} ({code}). \
Your goal is to accurately convey the meaning and nuances of the original {src} text while adhering to {tgt} grammar, vocabulary, and cultural sensitivities. \
Produce only the {tgt} translation, without any additional explanations or commentary. \
Please translate the following {src} text into {tgt} ({code}):"
    ))
}

/// Full prompt: instruction, blank line, source text.
pub fn build_eval_prompt(item: &EvalItem) -> Result<String> {
    if item.source.is_empty() {
        return Err(Error::invalid("eval item", "empty source"));
    }
    Ok(format!("{}\n\n{}", eval_instruction(&item.pair)?, item.source))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub id: String,
    pub pair: String,
    pub reasoning: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<EngineOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One completion per item. Engine failures are recorded on the outcome and
/// the run continues.
pub fn run_eval(items: &[EvalItem], engine: &Engine, reasoning: bool) -> Result<Vec<EvalOutcome>> {
    if engine.config().temperature != 0.0 {
        return Err(Error::precondition(format!(
            "engine {} must decode at temperature 0, has {}",
            engine.name(),
            engine.config().temperature
        )));
    }
    let engine = engine.with_reasoning(reasoning);
    Ok(items
        .par_iter()
        .map(|item| {
            let result = build_eval_prompt(item)
                .and_then(|p| engine.complete(&[ChatMessage::user(p)]).map_err(Error::from));
            let (output, error) = match result {
                Ok(o) => (Some(o), None),
                Err(e) => (None, Some(e.to_string())),
            };
            EvalOutcome {
                id: item.key(),
                pair: item.pair.key(),
                reasoning,
                output,
                error,
            }
        })
        .collect())
}

/// Direction of the underlying metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    HigherIsBetter,
    LowerIsBetter,
}

/// Maps a raw score on `[0, scale_max]` onto a 0-100 higher-is-better value.
pub fn display_score<T: Scalar>(value: T, scale_max: T, polarity: Polarity) -> T {
    let hundred = lit::<T>(100.0);
    match polarity {
        Polarity::HigherIsBetter => hundred * value / scale_max,
        Polarity::LowerIsBetter => hundred * (T::one() - value / scale_max),
    }
}

/// Per-pair means of item scores.
pub fn pair_means<T: Scalar>(scored: &[(String, T)]) -> BTreeMap<String, T> {
    let mut groups: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (pair, v) in scored {
        groups.entry(pair.clone()).or_default().push(*v);
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| mean(&v).map(|m| (k, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow<T> {
    pub system: String,
    pub cells: BTreeMap<String, T>,
    pub avg: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable<T> {
    /// Column order.
    pub pairs: Vec<String>,
    pub rows: Vec<EvalRow<T>>,
}

/// Builds a table whose average column is the mean over `pairs`. Every row
/// must have a cell for every pair; row order is kept.
pub fn aggregate<T: Scalar>(pairs: &[String], rows: Vec<(String, BTreeMap<String, T>)>) -> Result<EvalTable<T>> {
    if pairs.is_empty() {
        return Err(Error::precondition("no pairs configured"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (system, cells) in rows {
        let mut vals = Vec::with_capacity(pairs.len());
        for p in pairs {
            match cells.get(p) {
                Some(v) => vals.push(*v),
                None => return Err(Error::precondition(format!("system {system}: missing pair {p}"))),
            }
        }
        let avg = mean(&vals).expect("pairs is non-empty");
        out.push(EvalRow { system, cells, avg });
    }
    Ok(EvalTable {
        pairs: pairs.to_vec(),
        rows: out,
    })
}

impl<T: Scalar> EvalTable<T> {
    pub fn row(&self, system: &str) -> Option<&EvalRow<T>> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Aligned text, one decimal.
    pub fn render(&self) -> String {
        let sys_w = self.rows.iter().map(|r| r.system.len()).max().unwrap_or(0).max("System".len());
        let cell_w = self.pairs.iter().map(|p| p.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:<sys_w$}", "System");
        for p in &self.pairs {
            let _ = write!(out, "  {p:>cell_w$}");
        }
        let _ = writeln!(out, "  {:>cell_w$}", "Avg.");
        for r in &self.rows {
            let _ = write!(out, "{:<sys_w$}", r.system);
            for p in &self.pairs {
                let v = r.cells[p].to_f64().unwrap_or(f64::NAN);
                let _ = write!(out, "  {v:>cell_w$.1}");
            }
            let _ = writeln!(out, "  {:>cell_w$.1}", r.avg.to_f64().unwrap_or(f64::NAN));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::{StubTransport, Completion, EngineConfig};
    use std::sync::Arc;

    fn fr_item(src: &str) -> EvalItem {
        EvalItem {
            id: None,
            pair: LanguagePair::new("en", "fr", "France", "fr_FR").unwrap(),
            source: src.into(),
            reference: None,
        }
    }

    #[test]
    fn prompt_text() {
        let p = build_eval_prompt(&fr_item("Hello.")).unwrap();
        assert!(p.starts_with("You are a professional English to French translator"));
        assert!(p.contains("suitable for use in France (fr_FR)"));
        assert!(p.ends_with("into French (fr_FR):\n\nHello."));
        assert_eq!(p, build_eval_prompt(&fr_item("Hello.")).unwrap());
    }

    #[test]
    fn missing_region_is_config_error() {
        let mut item = fr_item("x");
        item.pair.target_region.clear();
        assert!(matches!(build_eval_prompt(&item), Err(Error::Config(_))));
    }

    #[test]
    fn items_file_round_trip() {
        let line = r#"{"source":"Hi","source_lang":"en","target_lang":"ja","target_region":"Japan","target_code":"ja_JP"}"#;
        let item: EvalItem = serde_json::from_str(line).unwrap();
        assert_eq!(item.pair.target, "ja");
        assert_eq!(serde_json::to_string(&item).unwrap(), line);
        assert!(serde_json::from_str::<EvalItem>(&line.replace("\"Hi\"", "\"\"")).is_err());
    }

    fn stub_engine(reply: &'static str) -> Engine {
        let t = StubTransport::new(move |_| Ok(Completion::text(reply)));
        Engine::new(EngineConfig::new("s", "stub", "m"), Arc::new(t)).unwrap()
    }

    #[test]
    fn eval_with_and_without_reasoning() {
        let e = stub_engine("<think>t</think>x");
        let items = vec![fr_item("a"), fr_item("b")];
        let on = run_eval(&items, &e, true).unwrap();
        assert_eq!(on.len(), 2);
        let o = on[0].output.as_ref().unwrap();
        assert_eq!((o.trace.as_str(), o.final_text.as_str()), ("t", "x"));
        let off = run_eval(&items, &e, false).unwrap();
        assert!(off.iter().all(|r| r.output.as_ref().unwrap().trace.is_empty()));
    }

    #[test]
    fn eval_requires_greedy_decoding() {
        let t = StubTransport::new(|_| Ok(Completion::text("x")));
        let mut cfg = EngineConfig::new("s", "stub", "m");
        cfg.temperature = 0.7;
        let e = Engine::new(cfg, Arc::new(t)).unwrap();
        assert!(run_eval(&[fr_item("a")], &e, true).is_err());
    }

    #[test]
    fn aggregate_average_and_missing_pair() {
        let pairs: Vec<String> = ["ar", "cs"].iter().map(|s| s.to_string()).collect();
        let mut cells = BTreeMap::new();
        cells.insert("ar".to_string(), 80.0);
        cells.insert("cs".to_string(), 82.0);
        let t = aggregate(&pairs, vec![("sys".into(), cells.clone())]).unwrap();
        assert_eq!(t.rows[0].avg, 81.0);
        assert!(t.render().contains("81.0"));
        cells.remove("cs");
        let err = aggregate(&pairs, vec![("sys".into(), cells)]).unwrap_err();
        assert!(err.to_string().contains("cs"));
    }

    #[test]
    fn constant_cells_average_to_constant() {
        let pairs: Vec<String> = default_pairs().iter().map(|p| p.target.clone()).collect();
        let cells = pairs.iter().map(|p| (p.clone(), 70.25)).collect();
        let t = aggregate(&pairs, vec![("k".into(), cells)]).unwrap();
        assert_eq!(t.rows[0].avg, 70.25);
    }

    #[test]
    fn display_polarity() {
        assert_eq!(display_score(0.8, 1.0, Polarity::HigherIsBetter), 80.0);
        assert_eq!(display_score(5.0, 25.0, Polarity::LowerIsBetter), 80.0);
    }
}
