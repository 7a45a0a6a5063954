mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::Config;
use crate::error::CliError;

/// Chain-of-thought distillation pipeline.
#[derive(Debug, Parser)]
#[command(name = "scotd", version)]
pub struct Cli {
    /// Pipeline config (TOML). Flags override its values.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Validate and print the plan without touching anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Directory with task.json and instances.jsonl.
    #[arg(long, global = true)]
    task_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    prompt_set: Option<PathBuf>,
    /// Repeat for more logging (RUST_LOG takes precedence).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample rationales from the teacher into a corpus.
    Sample(SampleArgs),
    /// Apply a filter, or the configured filter chain, to a corpus.
    Filter(FilterArgs),
    /// Export a corpus as training JSONL.
    Build(BuildArgs),
    /// Evaluate a student on the test set.
    Eval(EvalArgs),
    /// Train and evaluate students along one axis.
    Sweep(SweepArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown value {s:?}"))
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// One temperature-0 sample per instance.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub teacher_endpoint: Option<String>,
    #[arg(long)]
    pub teacher_model: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Apply this filter alone instead of the configured chain: correct_label,
    /// parse_ok, random_k, diversity_k, likelihood_top_k or open_endedness.
    #[arg(long, value_parser = parse_enum::<scotd::FilterKind>)]
    pub kind: Option<scotd::FilterKind>,
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// scotd, label_only or greedy_cot.
    #[arg(long, value_parser = parse_enum::<scotd::TrainingMode>)]
    pub mode: Option<scotd::TrainingMode>,
    /// supervised or few_shot.
    #[arg(long, value_parser = parse_enum::<scotd::Setting>)]
    pub setting: Option<scotd::Setting>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// no_cot, greedy or self_consistency.
    #[arg(long, value_parser = parse_enum::<scotd::Decode>)]
    pub decode: Option<scotd::Decode>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Labeled test instances (JSONL).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Contrast set for the test instances; the task must be binary.
    #[arg(long)]
    pub contrast: Option<PathBuf>,
    #[arg(long)]
    pub student_endpoint: Option<String>,
    #[arg(long)]
    pub student_model: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// n_rationales, data_fraction or model_size.
    #[arg(long, value_parser = parse_enum::<scotd::eval::SweepAxis>)]
    pub axis: Option<scotd::eval::SweepAxis>,
    /// Comma-separated sweep points, e.g. `1,5,10,20,30`.
    #[arg(long, value_delimiter = ',')]
    pub points: Option<Vec<f64>>,
    /// Sampled corpus to sweep over.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl Cli {
    /// Config file values with global flags applied on top.
    fn config(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).map_err(CliError::config)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        if let Some(d) = &self.cache_dir {
            cfg.cache_dir = Some(d.clone());
        }
        if let Some(d) = &self.task_dir {
            cfg.task.dir = Some(d.clone());
            cfg.task.manifest = None;
            cfg.task.instances = None;
        }
        if let Some(p) = &self.prompt_set {
            cfg.task.prompt_set = Some(p.clone());
        }
        Ok(cfg)
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = cli.config().and_then(|cfg| commands::run(&cli.command, cfg, cli.dry_run));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
