//! Command-line driver for the reasoning-trace curation pipeline.

pub mod config;
pub mod stages;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::PipelineConfig;
pub use stages::{Context, Stage, StageReport};

#[derive(Debug, Parser)]
#[command(name = "mtrace", version, about = "Build, filter and analyze structured reasoning traces for machine translation")]
pub struct Cli {
    /// Pipeline configuration file.
    #[arg(long, global = true, default_value = "mtrace.toml")]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Processes at most N documents or evaluation items.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
    /// Engine used for trajectories and evaluation instead of the configured one.
    #[arg(long, global = true)]
    pub engine: Option<String>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reads the corpus into documents.jsonl and rejects.jsonl.
    Ingest,
    /// Runs the four refinement steps for every document.
    Trajectory,
    /// Scores every step of every usable trajectory.
    Score,
    /// Applies the document and segment thresholds.
    Select,
    /// Assembles reasoning traces for kept documents.
    BuildTraces,
    /// Writes the training corpus and its manifest.
    EmitDataset,
    /// Counts reasoning paths per model.
    AnalyzeTraces,
    /// Runs the injector x receiver grid.
    Inject,
    /// Runs with/without-reasoning evaluation and aggregates the table.
    Eval,
    /// Prints the analysis, injection, evaluation and manifest tables.
    Report,
    /// Runs one stage, or ingest through emit-dataset when no stage is given.
    Run {
        #[arg(long, value_enum)]
        stage: Option<Stage>,
    },
    /// Checks the configuration and exits.
    Validate,
}

impl Command {
    fn stages(&self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::Trajectory => vec![Stage::Trajectory],
            Command::Score => vec![Stage::Score],
            Command::Select => vec![Stage::Select],
            Command::BuildTraces => vec![Stage::BuildTraces],
            Command::EmitDataset => vec![Stage::EmitDataset],
            Command::AnalyzeTraces => vec![Stage::AnalyzeTraces],
            Command::Inject => vec![Stage::Inject],
            Command::Eval => vec![Stage::Eval],
            Command::Report => vec![Stage::Report],
            Command::Run { stage: Some(s) } => vec![*s],
            Command::Run { stage: None } => Stage::CHAIN.to_vec(),
            Command::Validate => vec![],
        }
    }
}

/// Builds the run context with command-line overrides applied.
pub fn context(cli: &Cli) -> Result<Context> {
    let mut ctx = Context::from_file(&cli.config)?;
    if let Some(dir) = &cli.output_dir {
        ctx.out = dir.clone();
    }
    if cli.seed.is_some() {
        ctx.seed = cli.seed;
    }
    ctx.limit = cli.limit;
    if let Some(e) = &cli.engine {
        ctx.config.engine(e, &ctx.base)?;
        ctx.engine_override = Some(e.clone());
    }
    Ok(ctx)
}

/// Runs the requested stages in order, stopping at the first stage that
/// cannot run at all. Stages with partial failures keep their outputs and
/// the chain continues.
pub fn execute(cli: &Cli) -> Result<Vec<StageReport>> {
    let ctx = context(cli)?;
    let mut reports = Vec::new();
    for stage in cli.command.stages() {
        reports.push(ctx.run_stage(stage)?);
    }
    Ok(reports)
}
