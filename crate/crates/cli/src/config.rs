//! Pipeline configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mtrace_core::analysis::CueLexicon;
use mtrace_core::datasetio::DEFAULT_TOKEN_CAP;
use mtrace_core::digest::json_hash;
use mtrace_core::evalharness::Polarity;
use mtrace_core::scoring::ScoreMode;
use mtrace_core::{EngineConfig, LanguagePair, SelectionConfig, TraceKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed for trace assembly and subset sampling.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub corpus: CorpusSection,
    /// Engine tables keyed by name; the key becomes the engine's name.
    #[serde(default)]
    pub engines: BTreeMap<String, toml::Table>,
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub traces: TracesSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub inject: InjectSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub paths: Vec<PathBuf>,
    /// Pair applied to records that lack pair fields.
    #[serde(default)]
    pub default_pair: Option<LanguagePair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub engine: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    #[serde(default)]
    pub kind: ScorerKind,
    /// Base URL of the metric service (remote only).
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_mode")]
    pub mode: ScoreMode,
    #[serde(default)]
    pub polarity: Option<Polarity>,
}

fn default_mode() -> ScoreMode {
    ScoreMode::Qe
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            kind: ScorerKind::Offline,
            endpoint: None,
            mode: default_mode(),
            polarity: None,
        }
    }
}

impl ScorerSection {
    /// Both bundled scorers report errors, so lower is better unless
    /// configured otherwise.
    pub fn polarity(&self) -> Polarity {
        self.polarity.unwrap_or(Polarity::LowerIsBetter)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub doc_threshold: Option<f64>,
    pub seg_threshold: Option<f64>,
    pub inclusive: Option<bool>,
}

impl SelectionSection {
    pub fn resolve(&self) -> SelectionConfig {
        let d = SelectionConfig::default();
        SelectionConfig {
            doc_threshold: self.doc_threshold.unwrap_or(d.doc_threshold),
            seg_threshold: self.seg_threshold.unwrap_or(d.seg_threshold),
            inclusive: self.inclusive.unwrap_or(d.inclusive),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesSection {
    #[serde(default = "default_kind")]
    pub kind: TraceKind,
    /// Engine whose own reasoning is used for foreign traces.
    #[serde(default)]
    pub foreign_engine: Option<String>,
}

fn default_kind() -> TraceKind {
    TraceKind::Dynamic
}

impl Default for TracesSection {
    fn default() -> Self {
        TracesSection {
            kind: default_kind(),
            foreign_engine: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub subset: Option<usize>,
    #[serde(default = "default_token_cap")]
    pub token_cap: usize,
}

fn default_token_cap() -> usize {
    DEFAULT_TOKEN_CAP
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            subset: None,
            token_cap: DEFAULT_TOKEN_CAP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    pub model: String,
    pub path: PathBuf,
    /// JSON field holding the trace text.
    #[serde(default = "default_trace_field")]
    pub field: String,
}

fn default_trace_field() -> String {
    "trace".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub sources: Vec<TraceSource>,
    /// Engines asked for reasoning on the evaluation items.
    #[serde(default)]
    pub engines: Vec<String>,
    /// Include the traces built by the pipeline.
    #[serde(default = "yes")]
    pub include_built: bool,
    #[serde(default)]
    pub lexicon: CueLexicon,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            sources: Vec::new(),
            engines: Vec::new(),
            include_built: true,
            lexicon: CueLexicon::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectSection {
    #[serde(default)]
    pub injectors: Vec<String>,
    #[serde(default)]
    pub receivers: Vec<String>,
    /// Defaults to the evaluation items.
    #[serde(default)]
    pub items: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub items: Option<PathBuf>,
    #[serde(default)]
    pub engines: Vec<String>,
    /// Column keys such as "en-fr"; defaults to the nine standard pairs.
    #[serde(default)]
    pub pairs: Option<Vec<String>>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Engine config for `name`, with its name filled in and a relative
    /// replay directory resolved against `base`.
    pub fn engine(&self, name: &str, base: &Path) -> Result<EngineConfig> {
        let table = self
            .engines
            .get(name)
            .with_context(|| format!("unknown engine {name:?}"))?;
        let mut table = table.clone();
        table.insert("name".into(), toml::Value::String(name.to_owned()));
        let mut cfg: EngineConfig = table
            .try_into()
            .with_context(|| format!("engines.{name}"))?;
        if let Some(dir) = &cfg.replay_dir {
            if dir.is_relative() {
                cfg.replay_dir = Some(base.join(dir));
            }
        }
        cfg.validate().with_context(|| format!("engines.{name}"))?;
        Ok(cfg)
    }

    fn referenced_engines(&self) -> Vec<(&'static str, &String)> {
        let mut out = vec![("trajectory.engine", &self.trajectory.engine)];
        if let Some(f) = &self.traces.foreign_engine {
            out.push(("traces.foreign_engine", f));
        }
        out.extend(self.analysis.engines.iter().map(|e| ("analysis.engines", e)));
        out.extend(self.inject.injectors.iter().map(|e| ("inject.injectors", e)));
        out.extend(self.inject.receivers.iter().map(|e| ("inject.receivers", e)));
        out.extend(self.eval.engines.iter().map(|e| ("eval.engines", e)));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpus.paths.is_empty() {
            bail!("corpus.paths: at least one corpus file is required");
        }
        if self.workers == 0 {
            bail!("workers: must be at least 1");
        }
        for (field, name) in self.referenced_engines() {
            if !self.engines.contains_key(name) {
                bail!("{field}: engine {name:?} is not defined under [engines]");
            }
        }
        for name in self.engines.keys() {
            self.engine(name, Path::new(""))?;
        }
        if self.traces.kind == TraceKind::Foreign && self.traces.foreign_engine.is_none() {
            bail!("traces.foreign_engine: required when traces.kind = \"foreign\"");
        }
        if self.scorer.kind == ScorerKind::Remote && self.scorer.endpoint.is_none() {
            bail!("scorer.endpoint: required for the remote scorer");
        }
        self.selection
            .resolve()
            .validate()
            .context("selection")?;
        self.analysis.lexicon.validate().context("analysis.lexicon")?;
        if let Some(p) = &self.corpus.default_pair {
            p.validate().context("corpus.default_pair")?;
        }
        if self.dataset.token_cap == 0 {
            bail!("dataset.token_cap: must be positive");
        }
        Ok(())
    }

    /// Hash of everything that shapes the emitted data. Paths and output
    /// locations are left out so relocated runs hash the same.
    pub fn fingerprint(&self, base: &Path) -> Result<String> {
        let engine = self.engine(&self.trajectory.engine, base)?;
        let foreign = match &self.traces.foreign_engine {
            Some(name) => Some(self.engine(name, base)?.fingerprint()),
            None => None,
        };
        Ok(json_hash(&(
            engine.fingerprint(),
            foreign,
            &self.scorer.kind,
            &self.scorer.mode,
            self.selection.resolve(),
            &self.traces.kind,
            &self.dataset.subset,
            self.dataset.token_cap,
            self.seed,
        )))
    }
}
