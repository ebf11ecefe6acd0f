//! Reasoning-trace assembly.
//!
//! * static: four sections, each a transition sentence plus the full
//!   document translation of that step;
//! * dynamic: the full draft, then adequacy/fluency refinements of the
//!   challenging segments only, then a closing sentence without the final
//!   translation;
//! * direct: a single "no reasoning needed" sentence;
//! * foreign: a trace produced by another model, carried verbatim.
//!
//! Transition sentences are drawn from a [`SentenceBank`] with a seeded
//! ChaCha generator, so `(inputs, seed)` always yields the same bytes.
//!
//! Layout (sections separated by one blank line):
//!
//! ```text
//! Step 1 — Initial Draft
//! <sentence>
//! <full draft>
//!
//! Step 2 — Adequacy
//! <sentence>
//! [2] <adequacy translation of source line 2>
//!
//! Step 4 — Final Translation
//! <sentence>
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LanguagePair, SourceDocument};
use crate::error::{Error, Result};
use crate::numeric::Scalar;
use crate::pipeline::{RefinementTrajectory, StepKind};
use crate::selection::SelectionVerdict;

const INITIAL_DRAFT: [&str; 5] = [
    "Let me start by producing an initial, faithful translation of the source text into {target_language}, which will serve as the foundation for later refinements.",
    "To begin, I’ll create an initial, precise translation of the given text into {target_language}, laying the groundwork for further adjustments.",
    "I’ll translate the source text faithfully into {target_language} to form the base for refinement.",
    "For the first step, I’ll produce a faithful initial translation into {target_language}.",
    "Let’s begin with an accurate initial translation of the source into {target_language}, which I’ll refine in later steps if needed.",
];

const ADEQUACY: [&str; 4] = [
    "In this step, I focus on adequacy, ensuring that the full meaning of the challenging sentences is conveyed accurately and completely in {target_language}.",
    "My attention here is on adequacy, making sure the difficult sentences preserve every nuance and idea from the source in {target_language}.",
    "This step centers on adequacy, confirming that each complex sentence accurately communicates the original message in {target_language}.",
    "Adequacy guides my work in this step. I translate the challenging sentences so their sense remains complete and precise in {target_language}.",
];

const FLUENCY: [&str; 4] = [
    "At this stage, I refine the challenging sentences, ensuring they read smoothly and naturally in {target_language}, as if originally written in it.",
    "This step focuses on improving fluency, making the difficult sentences sound idiomatic in {target_language}.",
    "I rework the challenging parts to produce fluent, native-like versions in {target_language}.",
    "I dedicate this step to refining the harder sentences, aiming for smooth and natural expression in {target_language}.",
];

const FINAL: [&str; 3] = [
    "Finally, I bring together all the work from the previous steps, addressing any remaining issues to produce a polished final version in {target_language}.",
    "I conclude by integrating all prior revisions and delivering a coherent, high-quality translation in {target_language}.",
    "This step pulls together all prior improvements, correcting residual errors and finalizing the translation in {target_language}.",
];

const DIRECT: [&str; 10] = [
    "The user is asking for a translation from {source_language} into {target_language}. Analyzing the source text, I noticed that it is not particularly challenging to translate. Therefore, I will skip the reasoning steps and proceed directly with the translation.",
    "This looks like an easy translation request. I’ll skip step-by-step reasoning and directly translate it into {target_language}.",
    "Translate this from {source_language} to {target_language}. Since the text doesn’t appear complex, I’ll skip detailed reasoning and translate it directly.",
    "A translation from {source_language} to {target_language} is requested. The source seems easy, so I’ll provide a direct translation right away.",
    "Let’s translate this into {target_language}. The text isn’t difficult, so I’ll proceed without intermediate reasoning.",
    "I understand the task: translate the given text to {target_language}. It’s straightforward, so I’ll skip the reasoning process.",
    "This is a straightforward translation query. I’ll respond with a direct translation into {target_language}, without a stepwise explanation.",
    "The user needs a translation from {source_language} into {target_language}. I’ll create the final translation directly, as the text poses no challenge.",
    "I’ll translate this from {source_language} into {target_language}. Because the content is easy, I won’t follow a step-by-step translation process.",
    "The task is to translate from {source_language} to {target_language}. The text looks simple enough, so I’ll go straight to the translation.",
];

/// Transition sentences per step plus the direct-translation sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceBank {
    pub initial_draft: Vec<String>,
    pub adequacy: Vec<String>,
    pub fluency: Vec<String>,
    #[serde(rename = "final")]
    pub final_step: Vec<String>,
    pub direct: Vec<String>,
}

impl Default for SentenceBank {
    fn default() -> Self {
        Self::standard()
    }
}

impl SentenceBank {
    /// The built-in bank: 5 / 4 / 4 / 3 step sentences and 10 direct ones.
    pub fn standard() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SentenceBank {
            initial_draft: own(&INITIAL_DRAFT),
            adequacy: own(&ADEQUACY),
            fluency: own(&FLUENCY),
            final_step: own(&FINAL),
            direct: own(&DIRECT),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("initial_draft", &self.initial_draft),
            ("adequacy", &self.adequacy),
            ("fluency", &self.fluency),
            ("final", &self.final_step),
            ("direct", &self.direct),
        ] {
            if list.is_empty() {
                return Err(Error::invalid("sentence bank", format!("{name} list is empty")));
            }
        }
        Ok(())
    }

    pub fn for_step(&self, step: StepKind) -> &[String] {
        match step {
            StepKind::Draft => &self.initial_draft,
            StepKind::Adequacy => &self.adequacy,
            StepKind::Fluency => &self.fluency,
            StepKind::Final => &self.final_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Static,
    Dynamic,
    Direct,
    Foreign,
}

impl std::str::FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TraceKind::Static),
            "dynamic" => Ok(TraceKind::Dynamic),
            "direct" => Ok(TraceKind::Direct),
            "foreign" => Ok(TraceKind::Foreign),
            other => Err(Error::invalid("trace kind", format!("unknown kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TraceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TraceKind::Static => "static",
            TraceKind::Dynamic => "dynamic",
            TraceKind::Direct => "direct",
            TraceKind::Foreign => "foreign",
        })
    }
}

/// Assembled thinking text for one example. Also the trace-store record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub document_id: String,
    pub kind: TraceKind,
    pub seed: u64,
    pub text: String,
    /// Where embedded translations came from (engine or model name).
    #[serde(default)]
    pub provenance: String,
}

impl ReasoningTrace {
    /// Whitespace-delimited token count.
    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Indices drawn for the four step sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SentencePicks {
    pub draft: usize,
    pub adequacy: usize,
    pub fluency: usize,
    pub final_step: usize,
}

impl SentencePicks {
    /// All four draws are made regardless of which sections end up in the
    /// trace, so sections never shift each other's picks.
    pub fn draw(bank: &SentenceBank, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SentencePicks {
            draft: rng.random_range(0..bank.initial_draft.len()),
            adequacy: rng.random_range(0..bank.adequacy.len()),
            fluency: rng.random_range(0..bank.fluency.len()),
            final_step: rng.random_range(0..bank.final_step.len()),
        }
    }

    fn get(&self, step: StepKind) -> usize {
        match step {
            StepKind::Draft => self.draft,
            StepKind::Adequacy => self.adequacy,
            StepKind::Fluency => self.fluency,
            StepKind::Final => self.final_step,
        }
    }
}

/// Index of the direct sentence drawn for `seed`.
pub fn direct_pick(bank: &SentenceBank, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..bank.direct.len())
}

pub fn step_header(step: StepKind) -> String {
    let title = match step {
        StepKind::Draft => "Initial Draft",
        StepKind::Adequacy => "Adequacy",
        StepKind::Fluency => "Fluency",
        StepKind::Final => "Final Translation",
    };
    format!("Step {} — {}", step.number(), title)
}

fn fill(template: &str, pair: &LanguagePair) -> Result<String> {
    let mut out = template.replace("{target_language}", pair.target_name()?);
    if out.contains("{source_language}") {
        out = out.replace("{source_language}", pair.source_name()?);
    }
    Ok(out)
}

fn section(step: StepKind, sentence: &str, body: Option<&str>) -> String {
    let mut s = step_header(step);
    s.push('\n');
    s.push_str(sentence);
    if let Some(b) = body {
        s.push('\n');
        s.push_str(b);
    }
    s
}

fn sentence_for(bank: &SentenceBank, picks: &SentencePicks, step: StepKind, pair: &LanguagePair) -> Result<String> {
    fill(&bank.for_step(step)[picks.get(step)], pair)
}

/// Static template: every step with its full translation.
pub fn build_static_trace(
    doc: &SourceDocument,
    trajectory: &RefinementTrajectory,
    bank: &SentenceBank,
    seed: u64,
) -> Result<ReasoningTrace> {
    trajectory.ensure_usable_for(doc)?;
    bank.validate()?;
    let picks = SentencePicks::draw(bank, seed);
    let mut sections = Vec::with_capacity(4);
    for step in StepKind::ALL {
        let body = trajectory
            .step(step)
            .ok_or_else(|| Error::precondition(format!("trajectory has no {step} step")))?;
        let sentence = sentence_for(bank, &picks, step, &doc.pair)?;
        sections.push(section(step, &sentence, Some(body)));
    }
    Ok(ReasoningTrace {
        document_id: doc.id.clone(),
        kind: TraceKind::Static,
        seed,
        text: sections.join("\n\n"),
        provenance: String::new(),
    })
}

/// Dynamic template: full draft, refinements of challenging segments only,
/// closing sentence without the final translation. Steps 1 and 4 always
/// appear; Steps 2 and 3 only when some segment is challenging for them.
pub fn build_dynamic_trace<T: Scalar>(
    doc: &SourceDocument,
    trajectory: &RefinementTrajectory,
    verdict: &SelectionVerdict<T>,
    bank: &SentenceBank,
    seed: u64,
) -> Result<ReasoningTrace> {
    trajectory.ensure_usable_for(doc)?;
    bank.validate()?;
    if verdict.document_id != doc.id {
        return Err(Error::precondition(format!(
            "verdict {} does not belong to document {}",
            verdict.document_id, doc.id
        )));
    }
    if !verdict.kept {
        return Err(Error::precondition(format!("document {} was not kept", doc.id)));
    }
    if let Some(bad) = verdict.challenging.iter().find(|c| c.index >= doc.len()) {
        return Err(Error::precondition(format!(
            "challenging index {} out of range for {} segments",
            bad.index,
            doc.len()
        )));
    }
    let picks = SentencePicks::draw(bank, seed);
    let draft = trajectory
        .step(StepKind::Draft)
        .ok_or_else(|| Error::precondition("trajectory has no draft step"))?;
    let mut sections = vec![section(
        StepKind::Draft,
        &sentence_for(bank, &picks, StepKind::Draft, &doc.pair)?,
        Some(draft),
    )];
    for step in [StepKind::Adequacy, StepKind::Fluency] {
        let mut indices = verdict.challenging_for(step);
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            continue;
        }
        let segments = trajectory
            .step_segments(step)
            .ok_or_else(|| Error::precondition(format!("trajectory has no {step} step")))?;
        let body = indices
            .iter()
            .map(|&i| format!("[{}] {}", i + 1, segments[i]))
            .collect::<Vec<_>>()
            .join("\n");
        sections.push(section(
            step,
            &sentence_for(bank, &picks, step, &doc.pair)?,
            Some(&body),
        ));
    }
    sections.push(section(
        StepKind::Final,
        &sentence_for(bank, &picks, StepKind::Final, &doc.pair)?,
        None,
    ));
    Ok(ReasoningTrace {
        document_id: doc.id.clone(),
        kind: TraceKind::Dynamic,
        seed,
        text: sections.join("\n\n"),
        provenance: String::new(),
    })
}

/// Direct-translation trace: one sentence, no translations.
pub fn build_direct_trace(
    document_id: &str,
    pair: &LanguagePair,
    bank: &SentenceBank,
    seed: u64,
) -> Result<ReasoningTrace> {
    bank.validate()?;
    let text = fill(&bank.direct[direct_pick(bank, seed)], pair)?;
    Ok(ReasoningTrace {
        document_id: document_id.to_owned(),
        kind: TraceKind::Direct,
        seed,
        text,
        provenance: String::new(),
    })
}

/// Wraps a trace produced by another model. The text is kept verbatim.
pub fn build_foreign_trace(document_id: &str, text: &str, provenance: &str) -> ReasoningTrace {
    ReasoningTrace {
        document_id: document_id.to_owned(),
        kind: TraceKind::Foreign,
        seed: 0,
        text: text.to_owned(),
        provenance: provenance.to_owned(),
    }
}
