//! `refine` — rule-guided synthetic tabular data with dual-granularity
//! redundancy filtering.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use refine::commands::{self, CliError};
use refine::config::{Backend, Overrides, PipelineConfig};
use refine_core::filter::ProxyMetric;
use refine_core::gateway::RuleForm;
use refine_core::generate::MergeMode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MergeArg {
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleFormArg {
    Ifthen,
    Natural,
}

#[derive(Debug, Parser)]
#[command(
    name = "refine",
    version,
    about = "Rule-guided synthetic tabular data generation with redundancy filtering"
)]
struct Cli {
    /// Pipeline config file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for artifacts (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Chat-completions backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Log every prompt/reply exchange to this JSONL file.
    #[arg(long, global = true, value_name = "PATH")]
    transcript: Option<PathBuf>,
    /// Skip the redundancy filter (evaluation consumes syn.csv).
    #[arg(long, global = true)]
    skip_filter: bool,
    /// Skip rule extraction (generation prompts carry few-shot examples).
    #[arg(long, global = true)]
    skip_rules: bool,
    /// Proxy concentration measure.
    #[arg(long, global = true, value_enum)]
    filter_metric: Option<MetricArg>,
    /// How per-run tree paths merge into one rule.
    #[arg(long, global = true, value_enum)]
    merge: Option<MergeArg>,
    /// Rule rendering in generation prompts.
    #[arg(long, global = true, value_enum)]
    rule_form: Option<RuleFormArg>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Extract per-target if-then rules from the training split.
    Rules,
    /// Generate synthetic rows (extracts rules first if none exist).
    Generate,
    /// Filter synthetic rows for redundancy and produce the augmented set.
    Filter,
    /// Train-on-synthetic / test-on-real evaluation.
    Eval,
    /// Run every stage in sequence and write summary.json.
    Pipeline,
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            jobs: self.jobs,
            backend: self.backend.map(|b| match b {
                BackendArg::Http => Backend::Http,
                BackendArg::Mock => Backend::Mock,
            }),
            transcript: self.transcript.clone(),
            skip_filter: self.skip_filter,
            skip_rules: self.skip_rules,
            filter_metric: self.filter_metric.map(|m| match m {
                MetricArg::Gini => ProxyMetric::Gini,
                MetricArg::Entropy => ProxyMetric::Entropy,
            }),
            merge: self.merge.map(|m| match m {
                MergeArg::Deterministic => MergeMode::Deterministic,
                MergeArg::Llm => MergeMode::Llm,
            }),
            rule_form: self.rule_form.map(|f| match f {
                RuleFormArg::Ifthen => RuleForm::IfThen,
                RuleFormArg::Natural => RuleForm::Natural,
            }),
        }
    }
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // Usage errors are config errors (exit 1), not clap's
            // default exit 2 — that code means quota shortfall here.
            return Err(CliError::Config(e.to_string()));
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
    };
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::Config("--config PATH is required".to_string()))?;
    let mut cfg = PipelineConfig::load(&config_path)?;
    cfg.apply(&cli.overrides());
    cfg.validate().map_err(CliError::from)?;
    match cli.cmd {
        Cmd::Rules => {
            commands::cmd_rules(&cfg)?;
        }
        Cmd::Generate => {
            commands::cmd_generate(&cfg)?;
        }
        Cmd::Filter => {
            commands::cmd_filter(&cfg)?;
        }
        Cmd::Eval => {
            commands::cmd_eval(&cfg)?;
        }
        Cmd::Pipeline => {
            commands::cmd_pipeline(&cfg)?;
            println!("pipeline complete; artifacts in {}", cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
