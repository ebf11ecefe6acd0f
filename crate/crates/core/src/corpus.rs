//! Source documents: ingestion, line segmentation and line-alignment checks.
//!
//! A line is a substring separated by `"\n"`. A single trailing `"\n"` at the
//! end of a text does not open an extra empty line, which matches the
//! "keep the same number of lines" contract the translation prompts impose.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::lang::language_name;

/// Source/target languages plus the locale details the evaluation prompt needs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LanguagePair {
    pub source: String,
    pub target: String,
    pub target_region: String,
    pub target_code: String,
}

impl LanguagePair {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        target_region: impl Into<String>,
        target_code: impl Into<String>,
    ) -> Result<Self> {
        let pair = LanguagePair {
            source: source.into(),
            target: target.into(),
            target_region: target_region.into(),
            target_code: target_code.into(),
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("source", &self.source),
            ("target", &self.target),
            ("target_region", &self.target_region),
            ("target_code", &self.target_code),
        ] {
            if v.trim().is_empty() {
                return Err(Error::invalid("language pair", format!("{name} is empty")));
            }
        }
        if self.source == self.target {
            return Err(Error::invalid(
                "language pair",
                format!("source and target are both {:?}", self.source),
            ));
        }
        Ok(())
    }

    /// `"en-fr"` style key used in histograms and tables.
    pub fn key(&self) -> String {
        format!("{}-{}", self.source, self.target)
    }

    pub fn source_name(&self) -> Result<&'static str> {
        language_name(&self.source)
            .ok_or_else(|| Error::Config(format!("no language name for code {:?}", self.source)))
    }

    pub fn target_name(&self) -> Result<&'static str> {
        language_name(&self.target)
            .ok_or_else(|| Error::Config(format!("no language name for code {:?}", self.target)))
    }
}

/// A source-language document split into lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDocument {
    pub id: String,
    pub pair: LanguagePair,
    pub segments: Vec<String>,
    /// Whether the ingested text ended in a newline that segmentation dropped.
    pub trailing_newline: bool,
}

impl SourceDocument {
    pub fn from_text(id: impl Into<String>, pair: LanguagePair, text: &str) -> Self {
        let (segments, trailing_newline) = split_lines(text);
        SourceDocument {
            id: id.into(),
            pair,
            segments,
            trailing_newline,
        }
    }

    /// Reconstructs the ingested text byte-for-byte.
    pub fn text(&self) -> String {
        let mut t = self.segments.join("\n");
        if self.trailing_newline {
            t.push('\n');
        }
        t
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Splits `text` into lines; the flag reports a dropped trailing newline.
/// The empty string yields no lines.
pub fn split_lines(text: &str) -> (Vec<String>, bool) {
    if text.is_empty() {
        return (Vec::new(), false);
    }
    let (body, trailing) = match text.strip_suffix('\n') {
        Some(b) => (b, true),
        None => (text, false),
    };
    (body.split('\n').map(str::to_owned).collect(), trailing)
}

/// Number of lines in `text` under the segmentation rule.
pub fn count_lines(text: &str) -> usize {
    if text.is_empty() {
        return 0;
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.matches('\n').count() + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub document_id: String,
    pub source_lines: usize,
    pub translation_lines: usize,
    pub aligned: bool,
}

/// Compares the line count of `translation` with the document's segments.
pub fn check_alignment(doc: &SourceDocument, translation: &str) -> AlignmentReport {
    let source_lines = doc.segments.len();
    let translation_lines = count_lines(translation);
    // a document made of one blank line joins to "" (or "\n"), which counts as zero lines
    let blank_source = source_lines == 1 && doc.segments[0].is_empty();
    let aligned = source_lines == translation_lines || (blank_source && translation_lines == 0);
    AlignmentReport {
        document_id: doc.id.clone(),
        source_lines,
        translation_lines,
        aligned,
    }
}

/// One line of the input corpus and of the persisted document store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub source_lang: String,
    pub target_lang: String,
    pub target_region: String,
    pub target_code: String,
}

impl From<&SourceDocument> for CorpusRecord {
    fn from(doc: &SourceDocument) -> Self {
        CorpusRecord {
            id: Some(doc.id.clone()),
            text: doc.text(),
            source_lang: doc.pair.source.clone(),
            target_lang: doc.pair.target.clone(),
            target_region: doc.pair.target_region.clone(),
            target_code: doc.pair.target_code.clone(),
        }
    }
}

/// Entry in the rejects report: the offending line plus an error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    #[serde(flatten)]
    pub record: serde_json::Map<String, serde_json::Value>,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub documents: Vec<SourceDocument>,
    pub rejects: Vec<Reject>,
}

/// Reads a JSON-lines corpus file. Malformed records are collected as
/// rejects and ingestion continues; only an unreadable file is fatal.
///
/// Pair fields missing from a record are taken from `fallback` when given.
pub fn ingest(path: &Path, fallback: Option<&LanguagePair>) -> Result<IngestReport> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ingest_str(&raw, fallback))
}

pub fn ingest_str(raw: &str, fallback: Option<&LanguagePair>) -> IngestReport {
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                let mut record = serde_json::Map::new();
                record.insert("raw".into(), serde_json::Value::String(line.to_owned()));
                report.rejects.push(Reject {
                    line: line_no,
                    record,
                    error: format!("not valid json: {e}"),
                });
                continue;
            }
        };
        match parse_record(&value, fallback) {
            Ok(doc) if !seen.insert(doc.id.clone()) => report.rejects.push(Reject {
                line: line_no,
                record: as_object(value),
                error: format!("duplicate document id {:?}", doc.id),
            }),
            Ok(doc) => report.documents.push(doc),
            Err(error) => report.rejects.push(Reject {
                line: line_no,
                record: as_object(value),
                error,
            }),
        }
    }
    report
}

fn as_object(value: serde_json::Value) -> serde_json::Map<String, serde_json::Value> {
    match value {
        serde_json::Value::Object(m) => m,
        other => {
            let mut m = serde_json::Map::new();
            m.insert("raw".into(), other);
            m
        }
    }
}

fn parse_record(
    value: &serde_json::Value,
    fallback: Option<&LanguagePair>,
) -> std::result::Result<SourceDocument, String> {
    let obj = value.as_object().ok_or("record is not a json object")?;
    let field = |name: &str| -> std::result::Result<Option<String>, String> {
        match obj.get(name) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(format!("field {name:?} is not a string")),
        }
    };
    let text = field("text")?.ok_or("missing field \"text\"")?;
    if text.is_empty() {
        return Err("empty text body".into());
    }
    let pick = |name: &str, fb: Option<&String>| -> std::result::Result<String, String> {
        field(name)?
            .or_else(|| fb.cloned())
            .ok_or_else(|| format!("missing field {name:?}"))
    };
    let pair = LanguagePair {
        source: pick("source_lang", fallback.map(|p| &p.source))?,
        target: pick("target_lang", fallback.map(|p| &p.target))?,
        target_region: pick("target_region", fallback.map(|p| &p.target_region))?,
        target_code: pick("target_code", fallback.map(|p| &p.target_code))?,
    };
    pair.validate().map_err(|e| e.to_string())?;
    let id = match field("id")? {
        Some(id) if !id.is_empty() => id,
        Some(_) => return Err("empty id".into()),
        None => content_id(&text),
    };
    Ok(SourceDocument::from_text(id, pair, &text))
}

/// Id assigned to records that carry none.
pub fn content_id(text: &str) -> String {
    format!("doc-{}", &sha256_hex(text.as_bytes())[..16])
}

/// Persists documents in the input corpus format.
pub fn write_documents(path: &Path, docs: &[SourceDocument]) -> Result<()> {
    let records: Vec<CorpusRecord> = docs.iter().map(CorpusRecord::from).collect();
    crate::jsonl::write(path, &records)
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    crate::jsonl::write(path, rejects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn en_fr() -> LanguagePair {
        LanguagePair::new("en", "fr", "France", "fr_FR").unwrap()
    }

    #[test]
    fn two_line_split() {
        let d = SourceDocument::from_text("a", en_fr(), "Hello.\nWorld.");
        assert_eq!(d.segments, vec!["Hello.", "World."]);
    }

    #[test]
    fn single_line() {
        let d = SourceDocument::from_text("a", en_fr(), "Hello.");
        assert_eq!(d.segments, vec!["Hello."]);
    }

    #[test]
    fn trailing_newline_is_not_a_line_but_round_trips() {
        let d = SourceDocument::from_text("a", en_fr(), "x\ny\n");
        assert_eq!(d.segments, vec!["x", "y"]);
        assert_eq!(d.text(), "x\ny\n");
        let d = SourceDocument::from_text("a", en_fr(), "x\n\n");
        assert_eq!(d.segments, vec!["x", ""]);
    }

    #[test]
    fn alignment_counts_lines() {
        let d = SourceDocument::from_text("a", en_fr(), "a\nb");
        assert!(check_alignment(&d, "1\n2").aligned);
        let r = check_alignment(&d, "1\n2\n3");
        assert!(!r.aligned);
        assert_eq!(r.translation_lines, 3);
    }

    #[test]
    fn trailing_newline_in_translation_is_normalised() {
        let d = SourceDocument::from_text("a", en_fr(), "1\n2\n3\n4\n5");
        let r = check_alignment(&d, "a\nb\nc\nd\ne\n");
        assert_eq!(r.translation_lines, 5);
        assert!(r.aligned);
    }

    #[test]
    fn empty_translation_is_zero_lines() {
        let d = SourceDocument::from_text("a", en_fr(), "a");
        let r = check_alignment(&d, "");
        assert_eq!(r.translation_lines, 0);
        assert!(!r.aligned);
        let blank = SourceDocument::from_text("b", en_fr(), "\n");
        assert_eq!(blank.segments, vec![""]);
        assert!(check_alignment(&blank, "").aligned);
    }

    #[test]
    fn pair_validation() {
        assert!(LanguagePair::new("en", "en", "x", "y").is_err());
        assert!(LanguagePair::new("en", "fr", "", "fr_FR").is_err());
    }

    #[test]
    fn malformed_record_is_rejected_and_ingest_continues() {
        let raw = concat!(
            r#"{"id":"d1","text":"a\nb","source_lang":"en","target_lang":"fr","target_region":"France","target_code":"fr_FR"}"#,
            "\n",
            r#"{"id":"d2","source_lang":"en","target_lang":"fr","target_region":"France","target_code":"fr_FR"}"#,
            "\n",
            r#"{"text":"c","source_lang":"en","target_lang":"de","target_region":"Germany","target_code":"de_DE"}"#,
            "\n"
        );
        let rep = ingest_str(raw, None);
        assert_eq!(rep.documents.len(), 2);
        assert_eq!(rep.rejects.len(), 1);
        assert_eq!(rep.rejects[0].line, 2);
        assert!(rep.rejects[0].error.contains("text"));
        assert_eq!(rep.documents[1].id, content_id("c"));
    }

    #[test]
    fn fallback_pair_fills_missing_fields_and_duplicates_are_rejected() {
        let raw = "{\"id\":\"x\",\"text\":\"t\"}\n{\"id\":\"x\",\"text\":\"u\"}\nnot json\n";
        let rep = ingest_str(raw, Some(&en_fr()));
        assert_eq!(rep.documents.len(), 1);
        assert_eq!(rep.documents[0].pair, en_fr());
        assert_eq!(rep.rejects.len(), 2);
        assert!(rep.rejects[0].error.contains("duplicate"));
        assert!(rep.rejects[1].error.contains("json"));
    }

    #[test]
    fn unreadable_file_is_fatal() {
        assert!(matches!(
            ingest(Path::new("/definitely/not/here.jsonl"), None),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn segmentation_round_trips(text in "[a-z \\n\\r]{1,60}") {
            let d = SourceDocument::from_text("p", en_fr(), &text);
            prop_assert_eq!(d.text(), text.clone());
            prop_assert!(check_alignment(&d, &d.text()).aligned);
            prop_assert_eq!(d.segments.len(), count_lines(&text));
        }

        #[test]
        fn ingest_is_deterministic(texts in proptest::collection::vec("[a-z\\n]{1,20}", 1..8)) {
            let raw: String = texts
                .iter()
                .map(|t| serde_json::json!({
                    "text": t, "source_lang": "en", "target_lang": "fr",
                    "target_region": "France", "target_code": "fr_FR"
                }).to_string() + "\n")
                .collect();
            let a = ingest_str(&raw, None);
            let b = ingest_str(&raw, None);
            prop_assert_eq!(a.documents, b.documents);
        }
    }
}
