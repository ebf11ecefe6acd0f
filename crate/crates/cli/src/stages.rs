//! Pipeline stages. Every stage reads its inputs from and writes its
//! outputs to files under the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use mtrace_core::analysis::{aggregate_paths, count_paths, render_path_table};
use mtrace_core::corpus::{self, IngestReport, Reject, SourceDocument};
use mtrace_core::datasetio::{emit_dataset, EmitOptions, TrainingExample};
use mtrace_core::digest::{derive_seed, json_hash, sha256_hex};
use mtrace_core::engines::{ChatMessage, RetryPolicy};
use mtrace_core::evalharness::{
    aggregate, build_eval_prompt, default_pairs, display_score, pair_means, EvalItem, EvalOutcome,
};
use mtrace_core::inject::{injection_report, run_grid, InjectionRun};
use mtrace_core::pipeline::{run_batch, trajectory_input_hash, TrajectoryStatus};
use mtrace_core::scoring::{score_trajectory, ScoreItem, Scorer};
use mtrace_core::selection::{evaluate, retention};
use mtrace_core::traces::{build_direct_trace, build_dynamic_trace, build_foreign_trace, build_static_trace};
use mtrace_core::{
    jsonl, Engine, OfflineScorer, ReasoningTrace, RefinementTrajectory, RemoteScorer, ScoredTrajectory,
    SelectionVerdict, SentenceBank, StepKind, TraceKind,
};

use crate::config::{PipelineConfig, ScorerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Trajectory,
    Score,
    Select,
    BuildTraces,
    EmitDataset,
    AnalyzeTraces,
    Inject,
    Eval,
    Report,
}

impl Stage {
    /// The data-building chain run by `run` without `--stage`.
    pub const CHAIN: [Stage; 6] = [
        Stage::Ingest,
        Stage::Trajectory,
        Stage::Score,
        Stage::Select,
        Stage::BuildTraces,
        Stage::EmitDataset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Trajectory => "trajectory",
            Stage::Score => "score",
            Stage::Select => "select",
            Stage::BuildTraces => "build-traces",
            Stage::EmitDataset => "emit-dataset",
            Stage::AnalyzeTraces => "analyze-traces",
            Stage::Inject => "inject",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub mod files {
    pub const DOCUMENTS: &str = "documents.jsonl";
    pub const REJECTS: &str = "rejects.jsonl";
    pub const TRAJECTORIES: &str = "trajectories.jsonl";
    pub const SCORES: &str = "scores.jsonl";
    pub const SCORER: &str = "scorer.json";
    pub const VERDICTS: &str = "verdicts.jsonl";
    pub const TRACES: &str = "traces.jsonl";
    pub const DATASET: &str = "dataset.jsonl";
    pub const MANIFEST: &str = "manifest.json";
    pub const ANALYSIS_JSON: &str = "analysis.json";
    pub const ANALYSIS_TXT: &str = "analysis.txt";
    pub const INJECTION_RUNS: &str = "injection_runs.jsonl";
    pub const INJECTION_JSON: &str = "injection.json";
    pub const INJECTION_TXT: &str = "injection.txt";
    pub const EVAL_OUTPUTS: &str = "eval_outputs.jsonl";
    pub const EVAL_JSON: &str = "eval.json";
    pub const EVAL_TXT: &str = "eval.txt";
    pub const REPORT: &str = "report.txt";
}

/// Outcome of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    /// Records written.
    pub items: usize,
    /// Records carried over from a previous run.
    pub reused: usize,
    pub failures: usize,
    /// Requests handed to engines during this stage.
    pub engine_requests: u64,
    /// Whole stage skipped because its inputs were unchanged.
    pub up_to_date: bool,
}

impl StageReport {
    fn new(stage: Stage) -> Self {
        StageReport {
            stage,
            items: 0,
            reused: 0,
            failures: 0,
            engine_requests: 0,
            up_to_date: false,
        }
    }
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<15} items={} reused={} failures={} engine_requests={}{}",
            self.stage.as_str(),
            self.items,
            self.reused,
            self.failures,
            self.engine_requests,
            if self.up_to_date { " (up to date)" } else { "" }
        )
    }
}

/// The metric behind scores.jsonl, carried into the dataset manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScorerInfo {
    model_id: String,
    scale_max: f64,
}

#[derive(Serialize, Deserialize)]
struct StageStamp {
    input_hash: String,
}

/// A scored evaluation completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub system: String,
    #[serde(flatten)]
    pub outcome: EvalOutcome,
    pub score: Option<f64>,
}

/// Run-wide state: configuration, overrides and the engines built so far.
pub struct Context {
    pub config: PipelineConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub limit: Option<usize>,
    pub engine_override: Option<String>,
    engines: Mutex<BTreeMap<String, Engine>>,
    scorer: OnceLock<Box<dyn Scorer<f64>>>,
}

impl Context {
    pub fn new(config: PipelineConfig, base: PathBuf) -> Self {
        let out = base.join(&config.output_dir);
        let seed = config.seed;
        Context {
            config,
            base,
            out,
            seed,
            limit: None,
            engine_override: None,
            engines: Mutex::new(BTreeMap::new()),
            scorer: OnceLock::new(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let (config, base) = PipelineConfig::load(path)?;
        Ok(Context::new(config, base))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Engine by name; built once and shared by all stages of this run.
    pub fn engine(&self, name: &str) -> Result<Engine> {
        let mut cache = self.engines.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(e) = cache.get(name) {
            return Ok(e.clone());
        }
        let cfg = self.config.engine(name, &self.base)?;
        let engine = Engine::from_config(cfg).with_context(|| format!("engine {name}"))?;
        cache.insert(name.to_owned(), engine.clone());
        Ok(engine)
    }

    fn trajectory_engine_name(&self) -> &str {
        self.engine_override
            .as_deref()
            .unwrap_or(&self.config.trajectory.engine)
    }

    fn requests_so_far(&self) -> u64 {
        let cache = self.engines.lock().unwrap_or_else(|e| e.into_inner());
        cache.values().map(Engine::requests_sent).sum()
    }

    fn scorer(&self) -> Result<&dyn Scorer<f64>> {
        if let Some(s) = self.scorer.get() {
            return Ok(s.as_ref());
        }
        let s: Box<dyn Scorer<f64>> = match self.config.scorer.kind {
            ScorerKind::Offline => Box::new(OfflineScorer::default()),
            ScorerKind::Remote => {
                let endpoint = self.config.scorer.endpoint.as_deref().context("scorer.endpoint")?;
                Box::new(RemoteScorer::connect(endpoint, self.config.scorer.mode, RetryPolicy::default())?)
            }
        };
        Ok(self.scorer.get_or_init(|| s).as_ref())
    }

    fn scorer_identity(&self) -> Result<String> {
        let s = self.scorer()?;
        Ok(json_hash(&(
            s.model_id(),
            &self.config.scorer.kind,
            &self.config.scorer.mode,
            s.scale_max(),
        )))
    }

    fn require_seed(&self, stage: Stage) -> Result<u64> {
        self.seed
            .ok_or_else(|| anyhow!("{stage}: a seed is required (set `seed` in the config or pass --seed)"))
    }

    fn is_up_to_date(&self, stage: Stage, outputs: &[&str], hash: &str) -> bool {
        let stamp = self.path(&format!(".{}.stamp", stage.as_str()));
        let Ok(text) = std::fs::read_to_string(stamp) else {
            return false;
        };
        let Ok(s) = serde_json::from_str::<StageStamp>(&text) else {
            return false;
        };
        s.input_hash == hash && outputs.iter().all(|o| self.path(o).exists())
    }

    fn stamp(&self, stage: Stage, hash: String) -> Result<()> {
        let body = serde_json::to_vec(&StageStamp { input_hash: hash })?;
        jsonl::write_atomic(&self.path(&format!(".{}.stamp", stage.as_str())), &body)?;
        Ok(())
    }

    fn engine_fingerprints(&self, names: &[String]) -> Result<Vec<(String, String)>> {
        names
            .iter()
            .map(|n| Ok((n.clone(), self.config.engine(n, &self.base)?.fingerprint())))
            .collect()
    }

    fn items_hash(&self, path: Option<&PathBuf>) -> Result<String> {
        let path = path
            .or(self.config.eval.items.as_ref())
            .context("no evaluation items configured (eval.items)")?;
        let p = self.resolve(path);
        let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        Ok(json_hash(&(sha256_hex(&bytes), self.limit)))
    }

    /// Report for a stage whose stamp matches `hash`; `count` is the jsonl
    /// file whose line count is reported as the item count.
    fn reuse(&self, stage: Stage, outputs: &[&str], count: &str, hash: &str) -> Result<Option<StageReport>> {
        if !self.is_up_to_date(stage, outputs, hash) {
            return Ok(None);
        }
        let n = jsonl::read::<serde_json::Value>(&self.path(count))?.len();
        Ok(Some(StageReport {
            items: n,
            reused: n,
            up_to_date: true,
            ..StageReport::new(stage)
        }))
    }

    fn scorer_info(&self) -> Result<ScorerInfo> {
        let p = self.path(files::SCORER);
        let bytes = std::fs::read(&p).with_context(|| format!("reading {} (run the score stage first)", p.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn file_hash(&self, name: &str) -> Result<String> {
        let p = self.path(name);
        let bytes = std::fs::read(&p).with_context(|| format!("reading {} (run the earlier stage first)", p.display()))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageReport> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let before = self.requests_so_far();
        let mut report = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Trajectory => self.trajectory(),
            Stage::Score => self.score(),
            Stage::Select => self.select(),
            Stage::BuildTraces => self.build_traces(),
            Stage::EmitDataset => self.emit(),
            Stage::AnalyzeTraces => self.analyze(),
            Stage::Inject => self.inject(),
            Stage::Eval => self.eval(),
            Stage::Report => self.report(),
        }
        .with_context(|| format!("stage {stage}"))?;
        report.engine_requests = self.requests_so_far() - before;
        info!(%report, "stage finished");
        Ok(report)
    }

    pub fn documents(&self) -> Result<Vec<SourceDocument>> {
        let p = self.path(files::DOCUMENTS);
        if !p.exists() {
            bail!("{} not found (run the ingest stage first)", p.display());
        }
        let IngestReport { documents, rejects } = corpus::ingest(&p, None)?;
        if !rejects.is_empty() {
            bail!("{} is corrupt: {} unreadable records", p.display(), rejects.len());
        }
        Ok(documents)
    }

    fn read_stage<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Vec<T>> {
        let p = self.path(name);
        if !p.exists() {
            bail!("{} not found (run the earlier stage first)", p.display());
        }
        Ok(jsonl::read(&p)?)
    }

    fn ingest(&self) -> Result<StageReport> {
        let mut docs: Vec<SourceDocument> = Vec::new();
        let mut rejects: Vec<Reject> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for path in &self.config.corpus.paths {
            let path = self.resolve(path);
            let r = corpus::ingest(&path, self.config.corpus.default_pair.as_ref())?;
            for doc in r.documents {
                if seen.insert(doc.id.clone()) {
                    docs.push(doc);
                } else {
                    let mut record = serde_json::Map::new();
                    record.insert("id".into(), doc.id.clone().into());
                    record.insert("file".into(), path.display().to_string().into());
                    rejects.push(Reject {
                        line: 0,
                        record,
                        error: format!("duplicate document id {:?} across corpus files", doc.id),
                    });
                }
            }
            rejects.extend(r.rejects);
        }
        if let Some(n) = self.limit {
            docs.truncate(n);
        }
        corpus::write_documents(&self.path(files::DOCUMENTS), &docs)?;
        corpus::write_rejects(&self.path(files::REJECTS), &rejects)?;
        for r in &rejects {
            warn!(line = r.line, error = %r.error, "rejected record");
        }
        Ok(StageReport {
            items: docs.len(),
            failures: 0,
            ..StageReport::new(Stage::Ingest)
        })
    }

    fn trajectory(&self) -> Result<StageReport> {
        let docs = self.documents()?;
        let engine = self.engine(self.trajectory_engine_name())?;
        let previous: Vec<RefinementTrajectory> = jsonl::read_if_exists(&self.path(files::TRAJECTORIES))?;
        let mut done: HashMap<String, RefinementTrajectory> = previous
            .into_iter()
            .filter(|t| !matches!(t.status, TrajectoryStatus::Failed { .. }))
            .map(|t| (t.input_hash.clone(), t))
            .collect();
        let mut slots: Vec<Option<RefinementTrajectory>> = Vec::with_capacity(docs.len());
        let mut todo = Vec::new();
        for doc in &docs {
            match done.remove(&trajectory_input_hash(doc, &engine)) {
                Some(t) if t.document_id == doc.id => slots.push(Some(t)),
                _ => {
                    slots.push(None);
                    todo.push(doc.clone());
                }
            }
        }
        let reused = docs.len() - todo.len();
        let mut fresh = run_batch(&todo, &engine, self.config.workers)?.into_iter();
        let all: Vec<RefinementTrajectory> = slots
            .into_iter()
            .map(|s| s.unwrap_or_else(|| fresh.next().expect("one trajectory per pending document")))
            .collect();
        jsonl::write(&self.path(files::TRAJECTORIES), &all)?;
        let failures = all
            .iter()
            .filter(|t| matches!(t.status, TrajectoryStatus::Failed { .. }))
            .count();
        let misaligned = all.iter().filter(|t| t.status == TrajectoryStatus::Misaligned).count();
        if misaligned > 0 {
            info!(misaligned, "trajectories excluded for misalignment");
        }
        Ok(StageReport {
            items: all.len(),
            reused,
            failures,
            ..StageReport::new(Stage::Trajectory)
        })
    }

    fn score(&self) -> Result<StageReport> {
        let hash = json_hash(&(
            self.file_hash(files::DOCUMENTS)?,
            self.file_hash(files::TRAJECTORIES)?,
            self.scorer_identity()?,
        ));
        if self.is_up_to_date(Stage::Score, &[files::SCORES, files::SCORER], &hash) {
            let n = jsonl::read::<serde_json::Value>(&self.path(files::SCORES))?.len();
            return Ok(StageReport {
                items: n,
                reused: n,
                up_to_date: true,
                ..StageReport::new(Stage::Score)
            });
        }
        let docs: HashMap<String, SourceDocument> = self.documents()?.into_iter().map(|d| (d.id.clone(), d)).collect();
        let trajectories: Vec<RefinementTrajectory> = self.read_stage(files::TRAJECTORIES)?;
        let scorer = self.scorer()?;
        write_json(
            &self.path(files::SCORER),
            &ScorerInfo {
                model_id: scorer.model_id(),
                scale_max: scorer.scale_max(),
            },
        )?;
        let mut scored = Vec::new();
        let mut failures = 0;
        for t in trajectories.iter().filter(|t| t.is_usable()) {
            let Some(doc) = docs.get(&t.document_id) else {
                warn!(doc = %t.document_id, "trajectory without document");
                failures += 1;
                continue;
            };
            match score_trajectory(doc, t, scorer) {
                Ok(s) => scored.push(s),
                Err(e) => {
                    warn!(doc = %t.document_id, error = %e, "scoring failed");
                    failures += 1;
                }
            }
        }
        jsonl::write(&self.path(files::SCORES), &scored)?;
        if failures == 0 {
            self.stamp(Stage::Score, hash)?;
        }
        Ok(StageReport {
            items: scored.len(),
            failures,
            ..StageReport::new(Stage::Score)
        })
    }

    fn select(&self) -> Result<StageReport> {
        let scored: Vec<ScoredTrajectory> = self.read_stage(files::SCORES)?;
        let cfg = self.config.selection.resolve();
        let verdicts = scored
            .iter()
            .map(|s| evaluate(s, &cfg))
            .collect::<mtrace_core::Result<Vec<SelectionVerdict>>>()?;
        jsonl::write(&self.path(files::VERDICTS), &verdicts)?;
        if let Some(r) = retention(&verdicts) {
            info!(kept = verdicts.iter().filter(|v| v.kept).count(), retention = r, "selection done");
        }
        Ok(StageReport {
            items: verdicts.len(),
            ..StageReport::new(Stage::Select)
        })
    }

    fn build_traces(&self) -> Result<StageReport> {
        let seed = self.require_seed(Stage::BuildTraces)?;
        let kind = self.config.traces.kind;
        let foreign_name = self.config.traces.foreign_engine.clone().filter(|_| kind == TraceKind::Foreign);
        let hash = json_hash(&(
            self.file_hash(files::DOCUMENTS)?,
            self.file_hash(files::TRAJECTORIES)?,
            self.file_hash(files::VERDICTS)?,
            kind,
            seed,
            self.engine_fingerprints(foreign_name.as_slice())?,
            self.trajectory_engine_name(),
        ));
        if let Some(r) = self.reuse(Stage::BuildTraces, &[files::TRACES], files::TRACES, &hash)? {
            return Ok(r);
        }
        let docs: HashMap<String, SourceDocument> = self.documents()?.into_iter().map(|d| (d.id.clone(), d)).collect();
        let trajectories: HashMap<String, RefinementTrajectory> = self
            .read_stage::<RefinementTrajectory>(files::TRAJECTORIES)?
            .into_iter()
            .map(|t| (t.document_id.clone(), t))
            .collect();
        let verdicts: Vec<SelectionVerdict> = self.read_stage(files::VERDICTS)?;
        let bank = SentenceBank::standard();
        let foreign = match &foreign_name {
            Some(name) => Some(self.engine(name)?.with_reasoning(true)),
            None => None,
        };
        let provenance = self.trajectory_engine_name().to_owned();
        let mut traces = Vec::new();
        let mut failures = 0;
        for v in verdicts.iter().filter(|v| v.kept) {
            let (Some(doc), Some(traj)) = (docs.get(&v.document_id), trajectories.get(&v.document_id)) else {
                warn!(doc = %v.document_id, "verdict without document or trajectory");
                failures += 1;
                continue;
            };
            let doc_seed = derive_seed(seed, &doc.id);
            let built = match kind {
                TraceKind::Dynamic => build_dynamic_trace(doc, traj, v, &bank, doc_seed),
                TraceKind::Static => build_static_trace(doc, traj, &bank, doc_seed),
                TraceKind::Direct => build_direct_trace(&doc.id, &doc.pair, &bank, doc_seed),
                TraceKind::Foreign => {
                    let engine = foreign.as_ref().expect("validated: foreign engine configured");
                    let item = EvalItem {
                        id: Some(doc.id.clone()),
                        pair: doc.pair.clone(),
                        source: doc.text(),
                        reference: None,
                    };
                    build_eval_prompt(&item)
                        .and_then(|p| engine.complete(&[ChatMessage::user(p)]).map_err(Into::into))
                        .map(|out| build_foreign_trace(&doc.id, &out.trace, engine.name()))
                }
            };
            match built {
                Ok(mut t) => {
                    if t.provenance.is_empty() {
                        t.provenance = provenance.clone();
                    }
                    traces.push(t);
                }
                Err(e) => {
                    warn!(doc = %doc.id, error = %e, "trace assembly failed");
                    failures += 1;
                }
            }
        }
        jsonl::write(&self.path(files::TRACES), &traces)?;
        if failures == 0 {
            self.stamp(Stage::BuildTraces, hash)?;
        }
        Ok(StageReport {
            items: traces.len(),
            failures,
            ..StageReport::new(Stage::BuildTraces)
        })
    }

    fn emit(&self) -> Result<StageReport> {
        let seed = self.require_seed(Stage::EmitDataset)?;
        let docs: HashMap<String, SourceDocument> = self.documents()?.into_iter().map(|d| (d.id.clone(), d)).collect();
        let trajectories: HashMap<String, RefinementTrajectory> = self
            .read_stage::<RefinementTrajectory>(files::TRAJECTORIES)?
            .into_iter()
            .map(|t| (t.document_id.clone(), t))
            .collect();
        let traces: Vec<ReasoningTrace> = self.read_stage(files::TRACES)?;
        let d = self.engine(self.trajectory_engine_name())?.config().delimiters.clone();
        let mut examples = Vec::with_capacity(traces.len());
        let mut offenders = Vec::new();
        for t in traces {
            let id = t.document_id.clone();
            let (Some(doc), Some(traj)) = (docs.get(&id), trajectories.get(&id)) else {
                offenders.push(id);
                continue;
            };
            let Some(target) = traj.step(StepKind::Final) else {
                offenders.push(id);
                continue;
            };
            match TrainingExample::new(doc, t, target.to_owned(), &d) {
                Ok(e) => examples.push(e),
                Err(e) => {
                    warn!(doc = %id, error = %e, "cannot serialize example");
                    offenders.push(id);
                }
            }
        }
        if !offenders.is_empty() {
            return Err(mtrace_core::Error::RoundTrip(offenders).into());
        }
        let opts = EmitOptions {
            kind: self.config.traces.kind,
            seed,
            subset: self.config.dataset.subset,
            token_cap: self.config.dataset.token_cap,
            config_hash: self.config.fingerprint(&self.base)?,
            scorer_model: self.scorer_info()?.model_id,
        };
        let manifest = emit_dataset(
            &examples,
            &opts,
            &d,
            &self.path(files::DATASET),
            &self.path(files::MANIFEST),
        )?;
        Ok(StageReport {
            items: manifest.records,
            ..StageReport::new(Stage::EmitDataset)
        })
    }

    fn eval_items(&self, path: Option<&PathBuf>) -> Result<Vec<EvalItem>> {
        let path = path
            .or(self.config.eval.items.as_ref())
            .context("no evaluation items configured (eval.items)")?;
        let mut items: Vec<EvalItem> = jsonl::read(&self.resolve(path))?;
        if let Some(n) = self.limit {
            items.truncate(n);
        }
        Ok(items)
    }

    /// Display-scale scores for `(source, translation, reference)` triples.
    fn score_texts(&self, items: Vec<ScoreItem>) -> Result<Vec<f64>> {
        let scorer = self.scorer()?;
        let polarity = self.config.scorer.polarity();
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(scorer.batch_limit().max(1)) {
            let raw = scorer.score_batch(chunk)?;
            if raw.len() != chunk.len() {
                bail!("scorer returned {} scores for {} items", raw.len(), chunk.len());
            }
            out.extend(raw.into_iter().map(|v| display_score(v, scorer.scale_max(), polarity)));
        }
        Ok(out)
    }

    fn analyze(&self) -> Result<StageReport> {
        let a = &self.config.analysis;
        let sources = a
            .sources
            .iter()
            .map(|src| {
                let p = self.resolve(&src.path);
                let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
                Ok((src.model.clone(), src.field.clone(), sha256_hex(&bytes)))
            })
            .collect::<Result<Vec<_>>>()?;
        let built = if a.include_built && self.path(files::TRACES).exists() {
            Some(self.file_hash(files::TRACES)?)
        } else {
            None
        };
        let items = if a.engines.is_empty() { None } else { Some(self.items_hash(None)?) };
        let hash = json_hash(&(sources, built, items, self.engine_fingerprints(&a.engines)?, &a.lexicon));
        let outputs = [files::ANALYSIS_JSON, files::ANALYSIS_TXT];
        if self.is_up_to_date(Stage::AnalyzeTraces, &outputs, &hash) {
            let stats: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(self.path(files::ANALYSIS_JSON))?)?;
            return Ok(StageReport {
                items: stats.len(),
                reused: stats.len(),
                up_to_date: true,
                ..StageReport::new(Stage::AnalyzeTraces)
            });
        }
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut failures = 0;
        for src in &a.sources {
            let rows: Vec<serde_json::Value> = jsonl::read(&self.resolve(&src.path))?;
            let counts = groups.entry(src.model.clone()).or_default();
            for (i, row) in rows.iter().enumerate() {
                let text = row
                    .get(&src.field)
                    .and_then(|v| v.as_str())
                    .with_context(|| format!("{}: line {} has no string field {:?}", src.path.display(), i + 1, src.field))?;
                counts.push(count_paths(text, &a.lexicon));
            }
        }
        if !a.engines.is_empty() {
            let items = self.eval_items(None)?;
            for name in &a.engines {
                let engine = self.engine(name)?.with_reasoning(true);
                let counts = groups.entry(name.clone()).or_default();
                for item in &items {
                    match build_eval_prompt(item)
                        .and_then(|p| engine.complete(&[ChatMessage::user(p)]).map_err(Into::into))
                    {
                        Ok(out) => counts.push(count_paths(&out.trace, &a.lexicon)),
                        Err(e) => {
                            warn!(engine = %name, item = %item.key(), error = %e, "no trace");
                            failures += 1;
                        }
                    }
                }
            }
        }
        if a.include_built && self.path(files::TRACES).exists() {
            let traces: Vec<ReasoningTrace> = jsonl::read(&self.path(files::TRACES))?;
            for t in traces {
                groups
                    .entry(format!("built-{}", t.kind))
                    .or_default()
                    .push(count_paths(&t.text, &a.lexicon));
            }
        }
        groups.retain(|_, v| !v.is_empty());
        if groups.is_empty() {
            bail!("no traces to analyze (configure analysis.sources or analysis.engines, or build traces first)");
        }
        let stats = aggregate_paths::<f64>(&groups)?;
        write_json(&self.path(files::ANALYSIS_JSON), &stats)?;
        jsonl::write_atomic(&self.path(files::ANALYSIS_TXT), render_path_table(&stats).as_bytes())?;
        if failures == 0 {
            self.stamp(Stage::AnalyzeTraces, hash)?;
        }
        Ok(StageReport {
            items: stats.len(),
            failures,
            ..StageReport::new(Stage::AnalyzeTraces)
        })
    }

    fn inject(&self) -> Result<StageReport> {
        let cfg = &self.config.inject;
        if cfg.injectors.is_empty() || cfg.receivers.is_empty() {
            bail!("inject.injectors and inject.receivers must both be non-empty");
        }
        let hash = json_hash(&(
            self.items_hash(cfg.items.as_ref())?,
            self.engine_fingerprints(&cfg.injectors)?,
            self.engine_fingerprints(&cfg.receivers)?,
            self.scorer_identity()?,
            self.config.scorer.polarity(),
        ));
        let outputs = [files::INJECTION_RUNS, files::INJECTION_JSON, files::INJECTION_TXT];
        if let Some(r) = self.reuse(Stage::Inject, &outputs, files::INJECTION_RUNS, &hash)? {
            return Ok(r);
        }
        let items = self.eval_items(cfg.items.as_ref())?;
        let injectors = cfg.injectors.iter().map(|n| self.engine(n)).collect::<Result<Vec<_>>>()?;
        let receivers = cfg.receivers.iter().map(|n| self.engine(n)).collect::<Result<Vec<_>>>()?;
        let grid = run_grid(&items, &injectors, &receivers)?;
        let by_id: HashMap<String, &EvalItem> = items.iter().map(|i| (i.key(), i)).collect();
        let score_item = |id: &str, translation: &str| -> Result<ScoreItem> {
            let item = by_id.get(id).with_context(|| format!("unknown example {id}"))?;
            Ok(ScoreItem {
                source: item.source.clone(),
                translation: translation.to_owned(),
                reference: item.reference.clone(),
            })
        };
        let run_items = grid
            .runs
            .iter()
            .map(|r| score_item(&r.example_id, &r.received_final))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<Option<f64>> = self.score_texts(run_items)?.into_iter().map(Some).collect();
        let mut baselines: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut failures = grid.failures.len();
        for rec in &receivers {
            let outcomes = mtrace_core::evalharness::run_eval(&items, rec, true)?;
            let ok: Vec<&EvalOutcome> = outcomes.iter().filter(|o| o.output.is_some()).collect();
            failures += outcomes.len() - ok.len();
            let texts = ok
                .iter()
                .map(|o| score_item(&o.id, &o.output.as_ref().expect("filtered").final_text))
                .collect::<Result<Vec<_>>>()?;
            let vals = self.score_texts(texts)?;
            baselines.insert(
                rec.name().to_owned(),
                ok.iter().map(|o| o.id.clone()).zip(vals).collect(),
            );
        }
        let report = injection_report(&cfg.injectors, &cfg.receivers, &grid.runs, &scores, &grid.failures, &baselines)?;
        #[derive(Serialize)]
        struct ScoredRun<'a> {
            #[serde(flatten)]
            run: &'a InjectionRun,
            score: Option<f64>,
        }
        let scored: Vec<ScoredRun> = grid
            .runs
            .iter()
            .zip(&scores)
            .map(|(run, score)| ScoredRun { run, score: *score })
            .collect();
        jsonl::write(&self.path(files::INJECTION_RUNS), &scored)?;
        write_json(&self.path(files::INJECTION_JSON), &(&report, &grid.failures))?;
        jsonl::write_atomic(&self.path(files::INJECTION_TXT), report.render().as_bytes())?;
        if failures == 0 {
            self.stamp(Stage::Inject, hash)?;
        }
        Ok(StageReport {
            items: grid.runs.len(),
            failures,
            ..StageReport::new(Stage::Inject)
        })
    }

    fn eval(&self) -> Result<StageReport> {
        let names: Vec<String> = match &self.engine_override {
            Some(e) => vec![e.clone()],
            None => self.config.eval.engines.clone(),
        };
        if names.is_empty() {
            bail!("no engines to evaluate (eval.engines or --engine)");
        }
        let items = self.eval_items(None)?;
        let pairs: Vec<String> = match &self.config.eval.pairs {
            Some(p) => p.clone(),
            None => default_pairs().iter().map(|p| p.key()).collect(),
        };
        let hash = json_hash(&(
            self.items_hash(None)?,
            self.engine_fingerprints(&names)?,
            &pairs,
            self.scorer_identity()?,
            self.config.scorer.polarity(),
        ));
        let outputs = [files::EVAL_OUTPUTS, files::EVAL_JSON, files::EVAL_TXT];
        if let Some(r) = self.reuse(Stage::Eval, &outputs, files::EVAL_OUTPUTS, &hash)? {
            return Ok(r);
        }
        let mut rows = Vec::new();
        let mut records = Vec::new();
        let mut failures = 0;
        for name in &names {
            let engine = self.engine(name)?;
            for reasoning in [true, false] {
                let system = format!("{name} ({})", if reasoning { "w" } else { "w/o" });
                let outcomes = mtrace_core::evalharness::run_eval(&items, &engine, reasoning)?;
                let texts: Vec<ScoreItem> = outcomes
                    .iter()
                    .zip(&items)
                    .filter_map(|(o, item)| {
                        o.output.as_ref().map(|out| ScoreItem {
                            source: item.source.clone(),
                            translation: out.final_text.clone(),
                            reference: item.reference.clone(),
                        })
                    })
                    .collect();
                let mut scores = self.score_texts(texts)?.into_iter();
                let mut per_pair = Vec::new();
                for o in outcomes {
                    let score = o.output.as_ref().map(|_| scores.next().expect("one score per output"));
                    match score {
                        Some(s) => per_pair.push((o.pair.clone(), s)),
                        None => failures += 1,
                    }
                    records.push(ScoredOutcome {
                        system: system.clone(),
                        outcome: o,
                        score,
                    });
                }
                rows.push((system, pair_means(&per_pair)));
            }
        }
        jsonl::write(&self.path(files::EVAL_OUTPUTS), &records)?;
        let table = aggregate::<f64>(&pairs, rows)?;
        write_json(&self.path(files::EVAL_JSON), &table)?;
        jsonl::write_atomic(&self.path(files::EVAL_TXT), table.render().as_bytes())?;
        if failures == 0 {
            self.stamp(Stage::Eval, hash)?;
        }
        Ok(StageReport {
            items: records.len(),
            failures,
            ..StageReport::new(Stage::Eval)
        })
    }

    fn report(&self) -> Result<StageReport> {
        let mut out = String::new();
        let mut sections = 0;
        for (title, file) in [
            ("Reasoning paths", files::ANALYSIS_TXT),
            ("Reasoning injection", files::INJECTION_TXT),
            ("Evaluation", files::EVAL_TXT),
        ] {
            let p = self.path(file);
            if let Ok(text) = std::fs::read_to_string(&p) {
                if sections > 0 {
                    out.push('\n');
                }
                out.push_str(&format!("== {title} ==\n{text}"));
                sections += 1;
            }
        }
        if let Ok(text) = std::fs::read_to_string(self.path(files::MANIFEST)) {
            if sections > 0 {
                out.push('\n');
            }
            out.push_str(&format!("== Dataset manifest ==\n{text}"));
            sections += 1;
        }
        if sections == 0 {
            bail!("nothing to report yet (run analyze-traces, inject, eval or emit-dataset first)");
        }
        jsonl::write_atomic(&self.path(files::REPORT), out.as_bytes())?;
        print!("{out}");
        Ok(StageReport {
            items: sections,
            ..StageReport::new(Stage::Report)
        })
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    jsonl::write_atomic(path, &bytes)?;
    Ok(())
}
