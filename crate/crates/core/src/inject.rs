//! Cross-model reasoning injection: one engine produces a trace on the
//! evaluation prompt, another receives it in its thinking channel and
//! writes only the final translation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engines::{ChatMessage, Engine};
use crate::error::{Error, Result};
use crate::evalharness::{build_eval_prompt, EvalItem};
use crate::numeric::{mean, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionRun {
    pub injector: String,
    pub receiver: String,
    pub example_id: String,
    pub injected_trace: String,
    pub received_final: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionFailure {
    pub injector: String,
    pub receiver: String,
    pub example_id: String,
    pub error: String,
}

fn check_injector(e: &Engine) -> Result<()> {
    if !e.config().reasoning_enabled || !e.capabilities().reasoning {
        return Err(Error::Config(format!("injector {} must have reasoning enabled", e.name())));
    }
    Ok(())
}

fn check_receiver(e: &Engine) -> Result<()> {
    if !e.config().reasoning_enabled {
        return Err(Error::Config(format!("receiver {} must have reasoning enabled", e.name())));
    }
    if !e.capabilities().prefill {
        return Err(Error::Config(format!("receiver {} does not support trace prefill", e.name())));
    }
    Ok(())
}

/// Runs one injection. Capabilities are checked before any request.
pub fn run_injection(example: &EvalItem, injector: &Engine, receiver: &Engine) -> Result<InjectionRun> {
    check_injector(injector)?;
    check_receiver(receiver)?;
    let messages = [ChatMessage::user(build_eval_prompt(example)?)];
    let produced = injector.complete(&messages)?;
    let received = receiver.complete_with_injected_trace(&messages, &produced.trace)?;
    Ok(InjectionRun {
        injector: injector.name().to_owned(),
        receiver: receiver.name().to_owned(),
        example_id: example.key(),
        injected_trace: produced.trace,
        received_final: received.final_text,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<InjectionRun>,
    pub failures: Vec<InjectionFailure>,
}

/// Every injector × receiver × example. Per-example work is parallel;
/// within an example the injector call precedes the receiver call. Output
/// order is injector, receiver, example.
pub fn run_grid(examples: &[EvalItem], injectors: &[Engine], receivers: &[Engine]) -> Result<GridResult> {
    for e in injectors {
        check_injector(e)?;
    }
    for e in receivers {
        check_receiver(e)?;
    }
    let mut jobs = Vec::new();
    for inj in injectors {
        for rec in receivers {
            for ex in examples {
                jobs.push((inj, rec, ex));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(inj, rec, ex)| run_injection(ex, inj, rec).map_err(|e| (inj, rec, ex, e)))
        .collect();
    let mut out = GridResult::default();
    for r in results {
        match r {
            Ok(run) => out.runs.push(run),
            Err((inj, rec, ex, e)) => out.failures.push(InjectionFailure {
                injector: inj.name().to_owned(),
                receiver: rec.name().to_owned(),
                example_id: ex.key(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell<T> {
    pub injector: String,
    pub receiver: String,
    /// `None` when no run of this cell succeeded.
    pub mean: Option<T>,
    pub runs: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport<T> {
    pub injectors: Vec<String>,
    pub receivers: Vec<String>,
    pub cells: Vec<GridCell<T>>,
    /// Receiver's own with-reasoning score over the examples of its runs.
    pub baseline: BTreeMap<String, T>,
}

/// Per-cell means. `scores[i]` belongs to `runs[i]`; `baselines` holds each
/// receiver's own with-reasoning score per example id.
pub fn injection_report<T: Scalar>(
    injectors: &[String],
    receivers: &[String],
    runs: &[InjectionRun],
    scores: &[Option<T>],
    failures: &[InjectionFailure],
    baselines: &BTreeMap<String, BTreeMap<String, T>>,
) -> Result<InjectionReport<T>> {
    if scores.len() != runs.len() {
        return Err(Error::precondition(format!(
            "{} runs but {} scores",
            runs.len(),
            scores.len()
        )));
    }
    let mut by_cell: BTreeMap<(&str, &str), Vec<T>> = BTreeMap::new();
    let mut examples: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (run, score) in runs.iter().zip(scores) {
        let s = score.ok_or_else(|| {
            Error::precondition(format!(
                "unscored run {} -> {} on {}",
                run.injector, run.receiver, run.example_id
            ))
        })?;
        by_cell.entry((&run.injector, &run.receiver)).or_default().push(s);
        examples.entry(&run.receiver).or_default().push(&run.example_id);
    }
    let mut cells = Vec::new();
    for inj in injectors {
        for rec in receivers {
            let vals = by_cell.get(&(inj.as_str(), rec.as_str()));
            cells.push(GridCell {
                injector: inj.clone(),
                receiver: rec.clone(),
                mean: vals.and_then(|v| mean(v)),
                runs: vals.map_or(0, Vec::len),
                failures: failures
                    .iter()
                    .filter(|f| &f.injector == inj && &f.receiver == rec)
                    .count(),
            });
        }
    }
    let mut baseline = BTreeMap::new();
    for rec in receivers {
        let Some(ids) = examples.get(rec.as_str()) else {
            continue;
        };
        let mut ids = ids.clone();
        ids.sort_unstable();
        ids.dedup();
        let own = baselines
            .get(rec)
            .ok_or_else(|| Error::precondition(format!("no baseline scores for receiver {rec}")))?;
        let vals = ids
            .iter()
            .map(|id| {
                own.get(*id)
                    .copied()
                    .ok_or_else(|| Error::precondition(format!("receiver {rec} has no baseline for {id}")))
            })
            .collect::<Result<Vec<T>>>()?;
        if let Some(m) = mean(&vals) {
            baseline.insert(rec.clone(), m);
        }
    }
    Ok(InjectionReport {
        injectors: injectors.to_vec(),
        receivers: receivers.to_vec(),
        cells,
        baseline,
    })
}

impl<T: Scalar> InjectionReport<T> {
    pub fn cell(&self, injector: &str, receiver: &str) -> Option<&GridCell<T>> {
        self.cells
            .iter()
            .find(|c| c.injector == injector && c.receiver == receiver)
    }

    /// Injectors as rows, receivers as columns, baseline as the last row.
    /// Cells without a successful run show `FAIL`; cells with some failed
    /// runs carry a `*`.
    pub fn render(&self) -> String {
        let row_w = self
            .injectors
            .iter()
            .map(String::len)
            .chain(["Injector \\ Receiver".len(), "Baseline".len()])
            .max()
            .unwrap_or(0);
        let col_w = self.receivers.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<row_w$}", "Injector \\ Receiver");
        for r in &self.receivers {
            let _ = write!(out, "  {r:>col_w$}");
        }
        out.push('\n');
        for inj in &self.injectors {
            let _ = write!(out, "{inj:<row_w$}");
            for rec in &self.receivers {
                let text = match self.cell(inj, rec) {
                    Some(GridCell {
                        mean: Some(m),
                        failures,
                        ..
                    }) => {
                        let mark = if *failures > 0 { "*" } else { "" };
                        format!("{:.1}{mark}", m.to_f64().unwrap_or(f64::NAN))
                    }
                    _ => "FAIL".to_owned(),
                };
                let _ = write!(out, "  {text:>col_w$}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<row_w$}", "Baseline");
        for rec in &self.receivers {
            let text = self
                .baseline
                .get(rec)
                .map_or("-".to_owned(), |b| format!("{:.1}", b.to_f64().unwrap_or(f64::NAN)));
            let _ = write!(out, "  {text:>col_w$}");
        }
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguagePair;
    use crate::engines::{StubTransport, Capabilities, Completion, EngineConfig};
    use std::sync::Arc;

    fn item(i: usize) -> EvalItem {
        EvalItem {
            id: Some(format!("ex{i}")),
            pair: LanguagePair::new("en", "fr", "France", "fr_FR").unwrap(),
            source: format!("source {i}"),
            reference: None,
        }
    }

    fn injector(name: &str, trace: &'static str) -> Engine {
        let t = StubTransport::new(move |_| Ok(Completion::text(format!("<think>{trace}</think>ignored"))));
        Engine::new(EngineConfig::new(name, "stub", "m"), Arc::new(t)).unwrap()
    }

    /// Replies with the prefill it was given, upper-cased, after echoing it.
    fn receiver(name: &str) -> (Engine, Arc<StubTransport>) {
        let t = Arc::new(StubTransport::new(|req| {
            let p = req.prefill().unwrap_or("").to_owned();
            Ok(Completion::text(format!("{p}final[{}]", p.len())))
        }));
        (Engine::new(EngineConfig::new(name, "stub", "m"), t.clone()).unwrap(), t)
    }

    #[test]
    fn trace_passes_through() {
        let (rec, log) = receiver("r");
        let run = run_injection(&item(0), &injector("i", "T"), &rec).unwrap();
        assert_eq!(run.injected_trace, "T");
        assert_eq!(run.received_final, "final[16]");
        let sent = log.requests();
        let body = serde_json::to_string(&sent[0]).unwrap();
        assert!(body.contains("<think>T</think>"));
    }

    #[test]
    fn grid_cardinality() {
        let injs = [injector("i1", "a"), injector("i2", "b")];
        let recs = [receiver("r1").0, receiver("r2").0];
        let items: Vec<_> = (0..5).map(item).collect();
        let g = run_grid(&items, &injs, &recs).unwrap();
        assert_eq!(g.runs.len(), 20);
        assert!(g.failures.is_empty());
    }

    #[test]
    fn receiver_without_prefill_fails_before_requests() {
        let t = StubTransport::new(|_| Ok(Completion::text("x"))).with_capabilities(Capabilities {
            reasoning: true,
            prefill: false,
        });
        let rec = Engine::new(EngineConfig::new("r", "stub", "m"), Arc::new(t)).unwrap();
        let inj = injector("i", "t");
        assert!(matches!(run_grid(&[item(0)], std::slice::from_ref(&inj), &[rec]), Err(Error::Config(_))));
        assert_eq!(inj.requests_sent(), 0);
        let off = injector("i", "t").with_reasoning(false);
        assert!(matches!(run_injection(&item(0), &off, &receiver("r").0), Err(Error::Config(_))));
    }

    fn run(inj: &str, rec: &str, ex: &str) -> InjectionRun {
        InjectionRun {
            injector: inj.into(),
            receiver: rec.into(),
            example_id: ex.into(),
            injected_trace: String::new(),
            received_final: String::new(),
        }
    }

    #[test]
    fn report_means_and_baseline() {
        let runs = vec![run("a", "b", "x"), run("a", "b", "y"), run("b", "b", "x"), run("b", "b", "y")];
        let scores = vec![Some(80.0), Some(82.0), Some(70.0), Some(71.0)];
        let mut own = BTreeMap::new();
        own.insert("x".to_string(), 70.0);
        own.insert("y".to_string(), 71.0);
        let baselines = BTreeMap::from([("b".to_string(), own)]);
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let rep = injection_report(&names(&["a", "b"]), &names(&["b"]), &runs, &scores, &[], &baselines).unwrap();
        assert_eq!(rep.cell("a", "b").unwrap().mean, Some(81.0));
        assert_eq!(rep.cell("b", "b").unwrap().mean, Some(70.5));
        assert_eq!(rep.baseline["b"], 70.5);
        let text = rep.render();
        assert!(text.contains("81.0") && text.contains("Baseline"));
    }

    #[test]
    fn unscored_run_and_missing_cell() {
        let runs = vec![run("a", "b", "x")];
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let none: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        assert!(injection_report(&names(&["a"]), &names(&["b"]), &runs, &[None], &[], &none).is_err());
        let failures = vec![InjectionFailure {
            injector: "a".into(),
            receiver: "c".into(),
            example_id: "x".into(),
            error: "boom".into(),
        }];
        let own = BTreeMap::from([("x".to_string(), 1.0)]);
        let baselines = BTreeMap::from([("b".to_string(), own)]);
        let rep = injection_report(&names(&["a"]), &names(&["b", "c"]), &runs, &[Some(2.0)], &failures, &baselines).unwrap();
        assert_eq!(rep.cell("a", "c").unwrap().mean, None);
        assert_eq!(rep.cell("a", "c").unwrap().failures, 1);
        assert!(rep.render().contains("FAIL"));
    }
}
