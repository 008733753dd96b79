//! Subcommand implementations. Each command loads what it needs, runs
//! one stage, writes that stage's artifacts under the output directory,
//! and returns a serializable summary for `summary.json`.
//!
//! Exit-code discipline: configuration and input problems are `1`, a
//! generation shortfall (under 90% of quota) is `2`, failures inside a
//! stage are `3`.

use std::path::Path;

use serde::Serialize;

use refine_core::data::{column_stats, stratified_split, ColumnStats, Dataset, Provenance, Task};
use refine_core::eval::evaluate_mle;
use refine_core::filter::{
    build_proxy, chunk_filter, concentration, instance_filter, partition, retention_ratio,
    run_filter, select_best, subset_concentration, syn_dynamics, union_surprisal, CandidateEval,
    FilterError, FilterOutcome, FilterParams, FilterReport,
};
use refine_core::gateway::{ChatCompleter, MockGateway, Templates};
use refine_core::generate::{
    extract_rules, generate_rows, plan_from_rules, plan_from_train, GenReport, TargetReport,
};
use refine_core::rules::RuleSet;
use refine_core::seed;

use crate::config::{salt, Backend, PipelineConfig};
use crate::http::{HttpGateway, Transcribing};
use crate::io;

/// Quota fill below this fraction is reported as a shortfall (exit 2).
pub const FILL_THRESHOLD: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("generation shortfall: filled {:.1}% of the quota (threshold {:.0}%)", fill * 100.0, FILL_THRESHOLD * 100.0)]
    Shortfall { fill: f64 },
    #[error("{0}")]
    Stage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Shortfall { .. } => 2,
            CliError::Stage(_) => 3,
        }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<io::IoError> for CliError {
    fn from(e: io::IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<crate::http::HttpError> for CliError {
    fn from(e: crate::http::HttpError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn stage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Stage(e.to_string())
}

/// The real data every stage starts from: the full dataset, its
/// stratified train/test split, and the training-range column stats.
pub struct StageCtx {
    pub data: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub stats: ColumnStats,
}

pub fn load_ctx(cfg: &PipelineConfig) -> Result<StageCtx, CliError> {
    let data = io::read_dataset(&cfg.dataset, cfg.schema.as_deref(), Provenance::Real)?;
    let (train, test) = stratified_split(&data, cfg.n_train, cfg.split_seed)
        .map_err(|e| CliError::Input(format!("splitting {}: {e}", cfg.dataset.display())))?;
    let stats = column_stats(&train).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(StageCtx { data, train, test, stats })
}

/// Builds the configured backend; with a transcript path every exchange
/// is also logged as JSONL.
pub fn make_completer(
    cfg: &PipelineConfig,
    ctx: &StageCtx,
) -> Result<Box<dyn ChatCompleter>, CliError> {
    let base: Box<dyn ChatCompleter> = match cfg.gateway.backend {
        Backend::Mock => Box::new(MockGateway::new(
            ctx.train.schema.clone(),
            ctx.stats.clone(),
            cfg.mock_profile(),
            seed::mix(cfg.seed, salt::GATEWAY),
        )),
        Backend::Http => Box::new(HttpGateway::from_config(&cfg.gateway)?),
    };
    match &cfg.transcript {
        Some(path) => Ok(Box::new(Transcribing::new(base, path)?)),
        None => Ok(base),
    }
}

fn rules_json(cfg: &PipelineConfig) -> std::path::PathBuf {
    cfg.out.join("rules.json")
}

/// Extracts rules and writes `rules.json` + `rules.txt`.
pub fn cmd_rules(cfg: &PipelineConfig) -> Result<RuleSet, CliError> {
    let ctx = load_ctx(cfg)?;
    let completer = make_completer(cfg, &ctx)?;
    let extraction = extract_rules(&ctx.train, &cfg.rule_params(), &Templates::default(), completer.as_ref())
        .map_err(stage)?;
    io::write_json(&rules_json(cfg), &extraction.rules)?;
    io::write_string(&cfg.out.join("rules.txt"), &extraction.rules.render())?;
    for rule in &extraction.rules.rules {
        println!(
            "rule [{}]: {} condition{}",
            rule.target.render().trim_start_matches('=').trim_start(),
            rule.conditions.len(),
            if rule.conditions.len() == 1 { "" } else { "s" }
        );
    }
    Ok(extraction.rules)
}

/// Everything `manifest.json` holds about a generation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub calls: usize,
    pub fill_fraction: f64,
    pub targets: Vec<TargetReport>,
}

impl Manifest {
    fn from_report(report: GenReport) -> Self {
        Manifest {
            requested: report.requested,
            accepted: report.accepted,
            rejected: report.rejected,
            calls: report.calls,
            fill_fraction: report.fill_fraction(),
            targets: report.targets,
        }
    }
}

/// Generates synthetic rows and writes `syn.csv` + `manifest.json`.
/// Reuses `rules.json` when present; otherwise extracts rules inline
/// (unless rules are skipped, in which case prompts carry few-shot
/// examples instead).
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<Manifest, CliError> {
    let ctx = load_ctx(cfg)?;
    let completer = make_completer(cfg, &ctx)?;
    let rules: Option<RuleSet> = if cfg.skip_rules {
        None
    } else if rules_json(cfg).exists() {
        Some(io::read_json(&rules_json(cfg))?)
    } else {
        let extraction =
            extract_rules(&ctx.train, &cfg.rule_params(), &Templates::default(), completer.as_ref())
                .map_err(stage)?;
        io::write_json(&rules_json(cfg), &extraction.rules)?;
        io::write_string(&cfg.out.join("rules.txt"), &extraction.rules.render())?;
        Some(extraction.rules)
    };
    let plan = match &rules {
        Some(rs) => plan_from_rules(rs, cfg.plan.total),
        None => plan_from_train(&ctx.train, cfg.rules.num_intervals, cfg.plan.total),
    }
    .map_err(stage)?;
    let (syn, report) = generate_rows(
        &plan,
        rules.as_ref(),
        &ctx.train,
        completer.as_ref(),
        &Templates::default(),
        &cfg.gen_params(),
    )
    .map_err(stage)?;
    io::write_dataset(&cfg.out.join("syn.csv"), &syn)?;
    let manifest = Manifest::from_report(report);
    io::write_json(&cfg.out.join("manifest.json"), &manifest)?;
    println!(
        "generated {} of {} rows in {} calls ({} rejected)",
        manifest.accepted, manifest.requested, manifest.calls, manifest.rejected
    );
    if manifest.fill_fraction < FILL_THRESHOLD {
        return Err(CliError::Shortfall { fill: manifest.fill_fraction });
    }
    Ok(manifest)
}

/// `run_filter` with the candidate retrainings fanned out over `jobs`
/// threads. Identical output to the sequential path: evaluations are
/// pure functions of the surviving union.
pub fn run_filter_jobs(
    train: &Dataset,
    syn: &Dataset,
    params: &FilterParams,
    jobs: usize,
) -> Result<FilterOutcome, FilterError> {
    if jobs <= 1 || params.chunk_candidates.len() <= 1 {
        return run_filter(train, syn, params);
    }
    if !(params.a.is_finite() && params.b.is_finite()) {
        return Err(FilterError::BadParams("retention coefficients must be finite"));
    }
    let stats = column_stats(train)?;
    let proxy = build_proxy(train, syn, &stats)?;
    let ratio_1 = concentration(&proxy.p, params.metric)?;
    let ratio_2 = retention_ratio(ratio_1, params.a, params.b);
    let split = partition(&proxy, ratio_1);

    let dynamics = syn_dynamics(train, syn, &params.boost)?;
    let correctness: Vec<f64> = dynamics.iter().map(|d| d.correctness).collect();
    let conf: Vec<f64> = dynamics.iter().map(|d| d.confidence).collect();
    let uncert: Vec<f64> = dynamics.iter().map(|d| d.uncertainty).collect();

    let instance = instance_filter(&split.low, &conf, &uncert, ratio_1);
    let shuffle_seed = seed::mix(params.seed, 1);

    // Chunking is cheap and sequential; only the retrainings fan out.
    let mut partial = Vec::with_capacity(params.chunk_candidates.len());
    for &s in &params.chunk_candidates {
        let chunk = chunk_filter(&split.high, &correctness, s, ratio_2, shuffle_seed)?;
        let mut union: Vec<usize> = chunk.kept.iter().chain(&instance.kept).copied().collect();
        union.sort_unstable();
        partial.push((s, chunk, union));
    }
    let todo: Vec<&[usize]> = {
        let unique: std::collections::BTreeSet<&[usize]> =
            partial.iter().map(|(_, _, union)| union.as_slice()).collect();
        unique.into_iter().collect()
    };
    type SurprisalSlot = std::sync::Mutex<Option<Result<Option<f64>, FilterError>>>;
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<SurprisalSlot> = todo.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(todo.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some(union) = todo.get(i) else { break };
                let result = union_surprisal(train, syn, union, &params.boost);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    let mut scored = std::collections::BTreeMap::new();
    for (union, slot) in todo.iter().zip(slots) {
        let result = slot.into_inner().expect("result slot").expect("worker filled slot");
        scored.insert(union.to_vec(), result?);
    }

    let evals: Vec<CandidateEval> = partial
        .into_iter()
        .map(|(chunk_size, chunk, union)| CandidateEval {
            chunk_size,
            chunk_scores: chunk.scores,
            retained_chunks: chunk.retained,
            kept_high: chunk.kept,
            surprisal: scored[&union],
            union,
        })
        .collect();
    let best = select_best(&evals);
    let kept = best.map(|b| evals[b].union.clone()).unwrap_or_default();
    let post_ratio_1 = if kept.is_empty() {
        None
    } else {
        Some(subset_concentration(&proxy, &kept, params.metric)?)
    };
    Ok(FilterOutcome { proxy, ratio_1, ratio_2, split, instance, evals, best, kept, post_ratio_1 })
}

/// Filters `syn.csv` and writes `aug.csv`, `filter_report.json`, and the
/// pre/post proxy distributions.
pub fn cmd_filter(cfg: &PipelineConfig) -> Result<FilterReport, CliError> {
    let ctx = load_ctx(cfg)?;
    let syn_path = cfg.out.join("syn.csv");
    let syn = io::read_dataset_with(&syn_path, &ctx.train.schema, Provenance::Synthetic)?;
    if syn.is_empty() {
        return Err(CliError::Input(format!(
            "{} is empty — nothing to filter",
            syn_path.display()
        )));
    }
    let outcome =
        run_filter_jobs(&ctx.train, &syn, &cfg.filter_params(), cfg.jobs).map_err(stage)?;
    let report = outcome.report(cfg.filter.metric);
    let mut rows = ctx.train.rows.clone();
    rows.extend(outcome.kept.iter().map(|&i| syn.rows[i].clone()));
    let aug = Dataset::new(ctx.train.schema.clone(), rows, Provenance::Real).map_err(stage)?;
    io::write_dataset(&cfg.out.join("aug.csv"), &aug)?;
    io::write_json(&cfg.out.join("filter_report.json"), &report)?;
    io::write_proxy(&cfg.out.join("proxy_pre.csv"), &outcome.proxy, None)?;
    io::write_proxy(&cfg.out.join("proxy_post.csv"), &outcome.proxy, Some(&outcome.kept))?;
    println!(
        "kept {} of {} synthetic rows (ratio_1 {:.4}{})",
        report.kept_total,
        report.input_total,
        report.ratio_1,
        match report.post_ratio_1 {
            Some(post) => format!(" -> {post:.4}"),
            None => String::new(),
        }
    );
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// "macro_f1" for classification, "r2" for regression.
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Train-on-synthetic / test-on-real evaluation; writes `metrics.json`.
/// Consumes `aug.csv` normally, `syn.csv` when the filter is skipped.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<Metrics, CliError> {
    let ctx = load_ctx(cfg)?;
    if ctx.test.is_empty() {
        return Err(CliError::Input(
            "held-out test set is empty; lower n_train below the dataset size".to_string(),
        ));
    }
    let source = if cfg.skip_filter { "syn.csv" } else { "aug.csv" };
    let pool_path = cfg.out.join(source);
    if !pool_path.exists() {
        return Err(CliError::Input(format!(
            "{} not found — run the earlier stages first",
            pool_path.display()
        )));
    }
    let pool = io::read_dataset_with(&pool_path, &ctx.train.schema, Provenance::Synthetic)?;
    if pool.is_empty() {
        return Err(CliError::Input(format!("{} is empty", pool_path.display())));
    }
    let result = evaluate_mle(&pool, &ctx.test, &cfg.mle_params()).map_err(stage)?;
    let metric = match ctx.train.schema.task {
        Task::Classification { .. } => "macro_f1",
        Task::Regression => "r2",
    };
    let metrics = Metrics {
        metric: metric.to_string(),
        mean: result.mean,
        std: result.std,
        per_seed: result.per_seed,
    };
    io::write_json(&cfg.out.join("metrics.json"), &metrics)?;
    println!("{}: {:.4} ± {:.4} over {} seeds", metrics.metric, metrics.mean, metrics.std, metrics.per_seed.len());
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n_train: usize,
    pub n_test: usize,
    /// Rule count; absent when rules were skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<usize>,
    pub generation: Manifest,
    /// Absent when the filter was skipped.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterReport>,
    pub eval: Metrics,
}

/// The full pipeline: rules → generate → filter → eval, honoring the
/// skip switches, then `summary.json`. The first failing stage aborts
/// with its own exit code.
pub fn cmd_pipeline(cfg: &PipelineConfig) -> Result<Summary, CliError> {
    let ctx = load_ctx(cfg)?;
    let rules = if cfg.skip_rules { None } else { Some(cmd_rules(cfg)?.rules.len()) };
    let generation = cmd_generate(cfg)?;
    let filter = if cfg.skip_filter { None } else { Some(cmd_filter(cfg)?) };
    let eval = cmd_eval(cfg)?;
    let summary =
        Summary { n_train: ctx.train.len(), n_test: ctx.test.len(), rules, generation, filter, eval };
    io::write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Convenience for tests and scripted runs: pipeline against a config
/// file path.
pub fn run_pipeline_file(config_path: &Path) -> Result<Summary, CliError> {
    let cfg = PipelineConfig::load(config_path)?;
    cmd_pipeline(&cfg)
}
