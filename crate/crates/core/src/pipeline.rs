//! Four-step refinement trajectories: draft, adequacy, fluency, final.
//!
//! Every step is a fresh, stateless request whose prompt re-embeds the
//! source and whichever earlier translations the step needs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::corpus::{check_alignment, LanguagePair, SourceDocument};
use crate::engines::{ChatMessage, Engine};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Draft,
    Adequacy,
    Fluency,
    Final,
}

impl StepKind {
    pub const ALL: [StepKind; 4] = [
        StepKind::Draft,
        StepKind::Adequacy,
        StepKind::Fluency,
        StepKind::Final,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Draft => "draft",
            StepKind::Adequacy => "adequacy",
            StepKind::Fluency => "fluency",
            StepKind::Final => "final",
        }
    }

    /// 1-based position in the trajectory.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    /// Steps whose output this step's prompt embeds.
    pub fn requires(self) -> &'static [StepKind] {
        match self {
            StepKind::Draft => &[],
            StepKind::Adequacy => &[StepKind::Draft],
            StepKind::Fluency => &[StepKind::Adequacy],
            StepKind::Final => &[StepKind::Draft, StepKind::Adequacy, StepKind::Fluency],
        }
    }
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const DRAFT_INSTRUCTION: &str = "Your goal is to translate a piece of text into {target_language} that accurately conveys the meaning and structure of the source text. Your translation should closely reflect the original content without omitting or adding information. If certain contextual details are missing, aim for a general translation that remains flexible across different contexts, and do not include any explanations or commentary. Keep the same number of lines as in the source text.\nProvide your best single translation of the original text enclosed in triple backticks:\n";

const ADEQUACY_INSTRUCTION: &str = "Now, produce a new translation into {target_language} that focuses primarily on the adequacy of translation.";

const FLUENCY_INSTRUCTION: &str = "Now, produce a new translation into {target_language} that focuses primarily on the fluency of translation, ensuring it reads as if it were originally written in {target_language}. Provide only one refined translation enclosed in triple backticks and do not output anything else after that.";

const SINGLE_ANSWER: &str = "Provide only one refined translation enclosed in triple backticks and do not output anything else after that.";

const KEEP_LINES: &str = "Keep the same number of lines as in the source text.";

const FINAL_HEAD: &str = "You are tasked with proofreading and final editing of a translation. You will be provided with three different translations: first draft, translation focused on adequacy, and translation focused on fluency. Your goal is to provide a polished final translation of the source text into {target_language}. Keep the same number of lines as in the source text.\n\nFor your reference, below are the source text, the draft translation, and refined translations, each enclosed in triple backticks:\n\n";

const FINAL_TAIL: &str = "Proofread the refined text for grammar, spelling, punctuation, terminology, and overall fluency. Ensure the translation accurately reflects the original meaning, intent, style, and structure, while sounding fully natural and idiomatic in {target_language}. Provide only the final polished translation enclosed in triple backticks and nothing else.";

fn fenced(label: &str, body: &str) -> String {
    format!("{label}\n```{body}```\n\n")
}

/// Builds the chat request for one refinement step.
///
/// `prior` must hold every step that `step` embeds; later steps are never
/// read even when present.
pub fn render_step_prompt(
    step: StepKind,
    doc: &SourceDocument,
    prior: &BTreeMap<StepKind, String>,
) -> Result<Vec<ChatMessage>> {
    let target = doc.pair.target_name()?;
    let source_lang = doc.pair.source_name()?;
    let need = |s: StepKind| -> Result<&str> {
        prior.get(&s).map(String::as_str).ok_or_else(|| {
            Error::precondition(format!(
                "{step} prompt for {} needs the {s} translation",
                doc.id
            ))
        })
    };
    let source = doc.text();
    let source_block = fenced(&format!("Source ({source_lang}):"), &source);
    let prompt = match step {
        StepKind::Draft => format!("{DRAFT_INSTRUCTION}```{source}```"),
        StepKind::Adequacy => {
            let draft = need(StepKind::Draft)?;
            format!(
                "For your reference, below are the source text and the draft translation, each enclosed in triple backticks:\n\n{source_block}{}{ADEQUACY_INSTRUCTION} {KEEP_LINES} {SINGLE_ANSWER}",
                fenced("Draft translation:", draft),
            )
        }
        StepKind::Fluency => {
            let adequacy = need(StepKind::Adequacy)?;
            format!(
                "For your reference, below are the source text and the adequacy-focused translation, each enclosed in triple backticks:\n\n{source_block}{}{FLUENCY_INSTRUCTION} {KEEP_LINES}",
                fenced("Refined translation (adequacy):", adequacy),
            )
        }
        StepKind::Final => {
            let draft = need(StepKind::Draft)?;
            let adequacy = need(StepKind::Adequacy)?;
            let fluency = need(StepKind::Fluency)?;
            format!(
                "{FINAL_HEAD}{source_block}{}{}{}{FINAL_TAIL}",
                fenced("Draft translation:", draft),
                fenced("Refined translation (adequacy):", adequacy),
                fenced("Refined translation (fluency):", fluency),
            )
        }
    };
    Ok(vec![ChatMessage::user(prompt.replace("{target_language}", target))])
}

/// Pulls the translation out of a step response: the content of the first
/// triple-backtick block (one framing newline on each side removed), or the
/// trimmed response when it has no complete block.
pub fn extract_translation(response: &str) -> String {
    if let Some(start) = response.find("```") {
        let rest = &response[start + 3..];
        if let Some(end) = rest.find("```") {
            let body = &rest[..end];
            let body = body.strip_prefix('\n').unwrap_or(body);
            let body = body.strip_suffix('\n').unwrap_or(body);
            return body.to_owned();
        }
    }
    response.trim().to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum TrajectoryStatus {
    /// All four steps present and line-aligned.
    Complete,
    /// All four steps present but at least one is not line-aligned.
    Misaligned,
    /// The engine failed at `step`; earlier steps are kept for audit.
    Failed { step: StepKind, error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementTrajectory {
    pub document_id: String,
    pub pair: LanguagePair,
    pub steps: BTreeMap<StepKind, String>,
    pub aligned: BTreeMap<StepKind, bool>,
    pub status: TrajectoryStatus,
    /// Hash of the document and engine fingerprint this record was built from.
    #[serde(default)]
    pub input_hash: String,
}

impl RefinementTrajectory {
    pub fn is_usable(&self) -> bool {
        self.status == TrajectoryStatus::Complete
    }

    pub fn step(&self, step: StepKind) -> Option<&str> {
        self.steps.get(&step).map(String::as_str)
    }

    /// Per-line view of one step's translation.
    pub fn step_segments(&self, step: StepKind) -> Option<Vec<String>> {
        self.step(step).map(|t| crate::corpus::split_lines(t).0)
    }

    /// Checks that this trajectory belongs to `doc` and is usable.
    pub fn ensure_usable_for(&self, doc: &SourceDocument) -> Result<()> {
        if self.document_id != doc.id {
            return Err(Error::precondition(format!(
                "trajectory {} does not belong to document {}",
                self.document_id, doc.id
            )));
        }
        if !self.is_usable() {
            return Err(Error::precondition(format!(
                "trajectory {} is not usable ({:?})",
                self.document_id, self.status
            )));
        }
        Ok(())
    }
}

/// Key identifying the work a trajectory represents.
pub fn trajectory_input_hash(doc: &SourceDocument, engine: &Engine) -> String {
    crate::digest::json_hash(&(
        &doc.id,
        &doc.pair,
        doc.text(),
        engine.config().fingerprint(),
    ))
}

/// Runs the four steps for one document, strictly in order.
///
/// Engine failures do not propagate: the trajectory is returned with the
/// steps completed so far and a `Failed` status.
pub fn run_trajectory(doc: &SourceDocument, engine: &Engine) -> RefinementTrajectory {
    let mut steps = BTreeMap::new();
    let mut aligned = BTreeMap::new();
    let mut status = TrajectoryStatus::Complete;
    for step in StepKind::ALL {
        let result = render_step_prompt(step, doc, &steps)
            .and_then(|msgs| engine.complete(&msgs).map_err(Error::from));
        match result {
            Ok(out) => {
                let text = extract_translation(&out.final_text);
                let report = check_alignment(doc, &text);
                debug!(doc = %doc.id, %step, aligned = report.aligned, "step done");
                aligned.insert(step, report.aligned);
                steps.insert(step, text);
            }
            Err(e) => {
                warn!(doc = %doc.id, %step, error = %e, "trajectory failed");
                status = TrajectoryStatus::Failed {
                    step,
                    error: e.to_string(),
                };
                break;
            }
        }
    }
    if status == TrajectoryStatus::Complete && aligned.values().any(|a| !a) {
        status = TrajectoryStatus::Misaligned;
    }
    RefinementTrajectory {
        document_id: doc.id.clone(),
        pair: doc.pair.clone(),
        steps,
        aligned,
        status,
        input_hash: trajectory_input_hash(doc, engine),
    }
}

/// Runs trajectories for many documents on a pool of `workers` threads.
/// Output order follows input order.
pub fn run_batch(docs: &[SourceDocument], engine: &Engine, workers: usize) -> Result<Vec<RefinementTrajectory>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| docs.par_iter().map(|d| run_trajectory(d, engine)).collect()))
}
