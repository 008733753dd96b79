//! Declarative pipeline configuration: a versioned JSON file holding
//! every tunable, with CLI flags overriding fields one-to-one. Configs
//! round-trip (`load(save(c)) == c`), so a sweep can be scripted by
//! editing and re-saving.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use refine_core::boost::BoostParams;
use refine_core::eval::MleParams;
use refine_core::filter::{FilterParams, ProxyMetric};
use refine_core::forest::ForestParams;
use refine_core::gateway::{MockProfile, RuleForm};
use refine_core::generate::{GenParams, MergeMode, RuleParams};
use refine_core::seed;

pub const CONFIG_VERSION: u32 = 1;

/// Salts for deriving per-stage seeds from the master seed, so stages
/// stay decorrelated but fully determined by one number.
pub mod salt {
    pub const RULES: u64 = 1;
    pub const GATEWAY: u64 = 2;
    pub const FILTER: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const REFMODEL: u64 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("unsupported config version {found} (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot write config {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 20, max_depth: 4, min_leaf: 2, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesConfig {
    /// Independent extraction runs feeding the majority vote.
    pub g: usize,
    /// Trees kept per run.
    pub k: usize,
    /// Regression only: number of target intervals.
    pub num_intervals: usize,
    pub merge: MergeMode,
    pub rule_form: RuleForm,
    pub forest: ForestConfig,
}

impl Default for RulesConfig {
    fn default() -> Self {
        RulesConfig {
            g: 5,
            k: 3,
            num_intervals: 3,
            merge: MergeMode::Deterministic,
            rule_form: RuleForm::IfThen,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Total synthetic rows requested (M), split evenly across targets.
    pub total: usize,
    /// Rows requested per model call.
    pub batch: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { total: 2000, batch: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    /// Fraction of rows duplicated (with jitter) from anchor rows.
    pub redundancy: f64,
    pub anchors: usize,
}

impl Default for MockConfig {
    fn default() -> Self {
        let p = MockProfile::default();
        MockConfig { redundancy: p.redundancy, anchors: p.anchors }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub backend: Backend,
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Sampling temperature for generation prompts.
    pub temperature: f64,
    /// Temperature for merge/aggregate prompts (symbolic steps want
    /// determinism).
    pub merge_temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Extra attempts after the first on transient failures.
    pub retries: u32,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Upper bound on concurrent in-flight requests.
    pub parallelism: usize,
    pub mock: MockConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            backend: Backend::Mock,
            endpoint: "https://api.openai.com/v1".to_string(),
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.7,
            merge_temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 60,
            retries: 3,
            api_key_env: "REFINE_API_KEY".to_string(),
            parallelism: 4,
            mock: MockConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Slope of the log retention schedule.
    pub a: f64,
    /// Offset of the log retention schedule.
    pub b: f64,
    pub chunk_candidates: Vec<usize>,
    pub metric: ProxyMetric,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let p = FilterParams::default();
        FilterConfig { a: p.a, b: p.b, chunk_candidates: p.chunk_candidates, metric: p.metric }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefModelConfig {
    /// Boosting rounds (the tracked "epochs").
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for RefModelConfig {
    fn default() -> Self {
        let p = BoostParams::default();
        RefModelConfig {
            rounds: p.rounds,
            learning_rate: p.learning_rate,
            max_depth: p.max_depth,
            min_leaf: p.min_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Rows drawn per repetition (capped at the evaluation set size).
    pub subsample: usize,
    pub repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { subsample: 1000, repeats: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub version: u32,
    pub dataset: PathBuf,
    /// Optional schema sidecar (JSON); without it the schema is inferred
    /// from the CSV.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Real rows drawn (stratified) into the training split; the rest
    /// become the held-out test set.
    pub n_train: usize,
    #[serde(default)]
    pub split_seed: u64,
    /// Master seed; per-stage seeds derive from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub skip_rules: bool,
    #[serde(default)]
    pub skip_filter: bool,
    #[serde(default)]
    pub rules: RulesConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub refmodel: RefModelConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_jobs() -> usize {
    4
}

/// CLI flag values; `None`/`false` leaves the config field untouched.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub backend: Option<Backend>,
    pub transcript: Option<PathBuf>,
    pub skip_filter: bool,
    pub skip_rules: bool,
    pub filter_metric: Option<ProxyMetric>,
    pub merge: Option<MergeMode>,
    pub rule_form: Option<RuleForm>,
}

impl PipelineConfig {
    pub fn new(dataset: PathBuf, n_train: usize) -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            dataset,
            schema: None,
            n_train,
            split_seed: 0,
            seed: 0,
            out: default_out(),
            jobs: default_jobs(),
            transcript: None,
            skip_rules: false,
            skip_filter: false,
            rules: RulesConfig::default(),
            plan: PlanConfig::default(),
            gateway: GatewayConfig::default(),
            filter: FilterConfig::default(),
            refmodel: RefModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(path, text)
            .map_err(|source| ConfigError::Write { path: path.to_path_buf(), source })
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            self.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(jobs) = overrides.jobs {
            self.jobs = jobs;
        }
        if let Some(backend) = overrides.backend {
            self.gateway.backend = backend;
        }
        if let Some(transcript) = &overrides.transcript {
            self.transcript = Some(transcript.clone());
        }
        if overrides.skip_filter {
            self.skip_filter = true;
        }
        if overrides.skip_rules {
            self.skip_rules = true;
        }
        if let Some(metric) = overrides.filter_metric {
            self.filter.metric = metric;
        }
        if let Some(merge) = overrides.merge {
            self.rules.merge = merge;
        }
        if let Some(form) = overrides.rule_form {
            self.rules.rule_form = form;
        }
    }

    /// Static checks: version, numeric ranges, referenced files. The
    /// data-dependent check (n_train covering every class) runs when the
    /// dataset is split.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version { found: self.version });
        }
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.n_train == 0 {
            return bad("n_train must be at least 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if self.rules.g == 0 || self.rules.k == 0 {
            return bad("rule extraction needs g >= 1 and k >= 1");
        }
        if self.rules.num_intervals == 0 {
            return bad("num_intervals must be at least 1");
        }
        if self.rules.forest.trees == 0 || self.rules.forest.max_depth == 0 {
            return bad("the forest needs at least one tree of depth at least 1");
        }
        if self.rules.forest.min_leaf == 0 {
            return bad("forest min_leaf must be at least 1");
        }
        if self.plan.batch == 0 {
            return bad("plan.batch must be at least 1");
        }
        if !(self.gateway.temperature.is_finite() && self.gateway.temperature >= 0.0) {
            return bad("gateway.temperature must be finite and non-negative");
        }
        if !(self.gateway.merge_temperature.is_finite() && self.gateway.merge_temperature >= 0.0) {
            return bad("gateway.merge_temperature must be finite and non-negative");
        }
        if self.gateway.max_tokens == 0 {
            return bad("gateway.max_tokens must be at least 1");
        }
        if self.gateway.timeout_secs == 0 {
            return bad("gateway.timeout_secs must be positive");
        }
        if self.gateway.parallelism == 0 {
            return bad("gateway.parallelism must be at least 1");
        }
        if self.gateway.api_key_env.is_empty() {
            return bad("gateway.api_key_env must name an environment variable");
        }
        if !(0.0..=1.0).contains(&self.gateway.mock.redundancy) {
            return bad("gateway.mock.redundancy must lie in [0, 1]");
        }
        if self.gateway.mock.anchors == 0 {
            return bad("gateway.mock.anchors must be at least 1");
        }
        if !(self.filter.a.is_finite() && self.filter.b.is_finite()) {
            return bad("filter coefficients a and b must be finite");
        }
        if self.filter.chunk_candidates.is_empty() {
            return bad("filter.chunk_candidates must not be empty");
        }
        if self.filter.chunk_candidates.contains(&0) {
            return bad("filter.chunk_candidates must all be at least 1");
        }
        if self.refmodel.rounds == 0 {
            return bad("refmodel.rounds must be at least 1");
        }
        if !(self.refmodel.learning_rate.is_finite() && self.refmodel.learning_rate > 0.0) {
            return bad("refmodel.learning_rate must be finite and positive");
        }
        if self.refmodel.max_depth == 0 || self.refmodel.min_leaf == 0 {
            return bad("refmodel trees need max_depth >= 1 and min_leaf >= 1");
        }
        if self.eval.repeats == 0 {
            return bad("eval.repeats must be at least 1");
        }
        if self.eval.subsample == 0 {
            return bad("eval.subsample must be at least 1");
        }
        if !self.dataset.exists() {
            return Err(ConfigError::MissingFile(self.dataset.clone()));
        }
        if let Some(schema) = &self.schema {
            if !schema.exists() {
                return Err(ConfigError::MissingFile(schema.clone()));
            }
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            num_trees: self.rules.forest.trees,
            max_depth: self.rules.forest.max_depth,
            min_leaf: self.rules.forest.min_leaf,
            features_per_split: 0,
            bootstrap: self.rules.forest.bootstrap,
            seed: 0, // overwritten per run inside extraction
        }
    }

    pub fn rule_params(&self) -> RuleParams {
        RuleParams {
            g: self.rules.g,
            k: self.rules.k,
            forest: self.forest_params(),
            num_intervals: self.rules.num_intervals,
            merge: self.rules.merge,
            seed: seed::mix(self.seed, salt::RULES),
        }
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams { batch: self.plan.batch, form: self.rules.rule_form, max_attempts: 0 }
    }

    pub fn boost_params(&self) -> BoostParams {
        BoostParams {
            rounds: self.refmodel.rounds,
            learning_rate: self.refmodel.learning_rate,
            max_depth: self.refmodel.max_depth,
            min_leaf: self.refmodel.min_leaf,
            seed: seed::mix(self.seed, salt::REFMODEL),
        }
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            a: self.filter.a,
            b: self.filter.b,
            boost: self.boost_params(),
            chunk_candidates: self.filter.chunk_candidates.clone(),
            metric: self.filter.metric,
            seed: seed::mix(self.seed, salt::FILTER),
        }
    }

    pub fn mle_params(&self) -> MleParams {
        MleParams {
            subsample: self.eval.subsample,
            repeats: self.eval.repeats,
            boost: self.boost_params(),
            seed: seed::mix(self.seed, salt::EVAL),
        }
    }

    pub fn mock_profile(&self) -> MockProfile {
        MockProfile { redundancy: self.gateway.mock.redundancy, anchors: self.gateway.mock.anchors }
    }
}
