//! Offline stand-in for a translation model.
//!
//! The fixture "translates" by reversing the characters of every word, and
//! degrades its drafts on a deterministic subset of lines so that the
//! refinement steps have something to fix. It recognises the step prompts
//! and the evaluation prompt by their fixed opening phrases and reads the
//! source text from the first fenced block (steps) or from after the header
//! paragraph (evaluation). Output is a pure function of the request.

use super::{Capabilities, ChatRequest, Completion, EngineError, Role, ThinkingDelimiters, Transport};
use crate::pipeline::StepKind;

pub struct FixtureTranslator {
    delimiters: ThinkingDelimiters,
}

enum PromptKind {
    Step(StepKind),
    Eval,
}

impl FixtureTranslator {
    pub fn new(delimiters: ThinkingDelimiters) -> Self {
        FixtureTranslator { delimiters }
    }

    /// The reference rendering of one line.
    pub fn ideal(line: &str) -> String {
        line.split_whitespace()
            .map(|w| w.chars().rev().collect::<String>())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// The fixture's output for one source line at one refinement step.
    pub fn step_line(step: StepKind, line: &str) -> String {
        let words: Vec<String> = line
            .split_whitespace()
            .map(|w| w.chars().rev().collect())
            .collect();
        let full = words.join(" ");
        let drop_last = || words[..words.len().saturating_sub(1)].join(" ");
        let first_half = || words[..words.len().div_ceil(2)].join(" ");
        let every_other = || {
            words
                .iter()
                .step_by(2)
                .cloned()
                .collect::<Vec<_>>()
                .join(" ")
        };
        // five of every eight lines are translated well at every step
        match (fnv1a(line) % 8, step) {
            (_, StepKind::Final) => full,
            (0..=4, _) => full,
            // repaired by adequacy, fluency keeps it
            (5, StepKind::Draft) => first_half(),
            (5, _) => full,
            // only fluency repairs it
            (6, StepKind::Draft | StepKind::Adequacy) => drop_last(),
            (6, StepKind::Fluency) => full,
            // adequacy repairs, fluency slightly regresses
            (_, StepKind::Draft) => every_other(),
            (_, StepKind::Adequacy) => full,
            (_, StepKind::Fluency) => drop_last(),
        }
    }

    fn classify(prompt: &str) -> Option<PromptKind> {
        if prompt.contains("You are tasked with proofreading") {
            Some(PromptKind::Step(StepKind::Final))
        } else if prompt.contains("focuses primarily on the fluency") {
            Some(PromptKind::Step(StepKind::Fluency))
        } else if prompt.contains("focuses primarily on the adequacy") {
            Some(PromptKind::Step(StepKind::Adequacy))
        } else if prompt.starts_with("Your goal is to translate") {
            Some(PromptKind::Step(StepKind::Draft))
        } else if prompt.starts_with("You are a professional") {
            Some(PromptKind::Eval)
        } else {
            None
        }
    }

    fn protocol(message: impl Into<String>) -> EngineError {
        EngineError::Protocol {
            endpoint: "fixture:".into(),
            message: message.into(),
        }
    }
}

fn first_fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")? + 3;
    let len = text[start..].find("```")?;
    Some(&text[start..start + len])
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Transport for FixtureTranslator {
    fn endpoint(&self) -> &str {
        "fixture:"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            reasoning: true,
            prefill: true,
        }
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, EngineError> {
        let prompt = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| Self::protocol("request has no user message"))?;
        match Self::classify(prompt).ok_or_else(|| Self::protocol("unrecognised prompt"))? {
            PromptKind::Step(step) => {
                let source = first_fenced_block(prompt)
                    .ok_or_else(|| Self::protocol("step prompt has no fenced source block"))?;
                let lines: Vec<String> = crate::corpus::split_lines(source)
                    .0
                    .iter()
                    .map(|l| Self::step_line(step, l))
                    .collect();
                Ok(Completion::text(format!("```{}```", lines.join("\n"))))
            }
            PromptKind::Eval => {
                let source = prompt
                    .split_once("\n\n")
                    .map(|(_, s)| s)
                    .ok_or_else(|| Self::protocol("evaluation prompt has no source text"))?;
                let translation: Vec<String> =
                    crate::corpus::split_lines(source).0.iter().map(|l| Self::ideal(l)).collect();
                let translation = translation.join("\n");
                if request.prefill().is_some() || !request.reasoning.enabled {
                    return Ok(Completion::text(translation));
                }
                let n = crate::corpus::count_lines(source);
                let mut trace = format!("I will translate the {n} line(s) word by word.");
                if fnv1a(source).is_multiple_of(3) {
                    trace.push_str(" Wait, the word order should stay as it is.");
                }
                let d = &self.delimiters;
                Ok(Completion::text(format!("{}{}{}{}", d.open, trace, d.close, translation)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_reverses_words() {
        assert_eq!(FixtureTranslator::ideal("the cat  sat"), "eht tac tas");
    }

    #[test]
    fn final_step_is_always_ideal() {
        for line in ["a b c", "hello there world", "x"] {
            assert_eq!(
                FixtureTranslator::step_line(StepKind::Final, line),
                FixtureTranslator::ideal(line)
            );
        }
    }

    #[test]
    fn degradation_buckets() {
        let line = (0..)
            .map(|i| format!("one two three x{i}"))
            .find(|l| fnv1a(l) % 8 == 5)
            .unwrap();
        assert_eq!(FixtureTranslator::step_line(StepKind::Draft, &line), "eno owt");
        assert_eq!(
            FixtureTranslator::step_line(StepKind::Adequacy, &line),
            FixtureTranslator::ideal(&line)
        );
        let line = (0..)
            .map(|i| format!("one two three x{i}"))
            .find(|l| fnv1a(l) % 8 == 7)
            .unwrap();
        assert_eq!(FixtureTranslator::step_line(StepKind::Draft, &line), "eno eerht");
        assert_eq!(FixtureTranslator::step_line(StepKind::Fluency, &line), "eno owt eerht");
    }

    #[test]
    fn fenced_block_extraction() {
        assert_eq!(first_fenced_block("a ```x\ny``` b ```z```"), Some("x\ny"));
        assert_eq!(first_fenced_block("no fences"), None);
    }
}
