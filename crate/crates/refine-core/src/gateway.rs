//! Chat-completion boundary: prompt construction, reply parsing, and a
//! deterministic mock backend.
//!
//! The pipeline only ever talks to a model through [`ChatCompleter`], so
//! every stage downstream of prompt construction is transport-agnostic.
//! The mock backend reads the rendered rule (or bare target clause) and
//! batch size back out of the prompt and samples rows under the rule's
//! constraints with a seeded ChaCha stream; a `redundancy` knob blends in
//! near-duplicates of a few anchor rows to imitate the mode collapse seen
//! in real model output at scale, which is what the filtering stage exists
//! to remove.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csv;
use crate::data::{ColumnKind, ColumnStats, Dataset, Row, Schema, Task, Value};
use crate::forest::{PathOp, RawPath};
use crate::rules::{self, format_sig, Condition, Op, Rule, RuleTarget};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("unresolved placeholder `{{{0}}}` in prompt template")]
    UnresolvedPlaceholder(String),
    #[error("mock backend found neither a rule nor a target clause in the prompt")]
    UnparseablePrompt,
    #[error("rule for target {0} rejected every sampled row")]
    Unsatisfiable(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

/// Anything that can answer a prompt: the HTTP transport in the std crate
/// or [`MockGateway`] here. Implementations must be safe to share across
/// threads; per-call state lives behind atomics.
pub trait ChatCompleter: Sync {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PromptTemplate {
    pub body: String,
}

impl PromptTemplate {
    pub fn new(body: &str) -> Self {
        PromptTemplate { body: body.to_string() }
    }

    /// Substitutes `{name}` slots. Any slot left unresolved is an error:
    /// a prompt with a hole in it wastes a paid model call.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, GatewayError> {
        let mut out = self.body.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        if let Some(start) = out.find('{') {
            let tail = &out[start + 1..];
            if let Some(end) = tail.find('}') {
                let name = &tail[..end];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    return Err(GatewayError::UnresolvedPlaceholder(name.to_string()));
                }
            }
        }
        Ok(out)
    }
}

/// Markers the mock backend keys on; kept as constants so the templates
/// and the mock can never drift apart.
pub const TARGET_MARKER: &str = "Target: [Target]";
pub const BATCH_MARKER: &str = "Generate exactly";

pub const DEFAULT_GENERATE_TEMPLATE: &str = "You are generating synthetic rows for a tabular {task_kind} dataset.\n\
Columns, in order:\n{schema_description}\n\n\
Every generated row must satisfy this rule:\n{rule}\n\n\
Target: [Target]{target_clause}\n\
The target column `{target_name}` is fixed to the value above for every row.\n\
{batch_marker} {batch_size} rows as CSV. Start with a header row naming all columns in the order listed, then one line per row. Output nothing but the CSV.";

pub const DEFAULT_UNGUIDED_TEMPLATE: &str = "You are generating synthetic rows for a tabular {task_kind} dataset.\n\
Columns, in order:\n{schema_description}\n\n\
Here are example rows from the real data:\n{examples}\n\n\
Target: [Target]{target_clause}\n\
The target column `{target_name}` is fixed to the value above for every row.\n\
{batch_marker} {batch_size} rows as CSV. Start with a header row naming all columns in the order listed, then one line per row. Output nothing but the CSV.";

pub const DEFAULT_MERGE_TEMPLATE: &str = "Below are if-then rules extracted from decision tree paths. Each line ends with the number of training rows supporting it.\n\
{paths}\n\n\
Merge them into exactly one rule per target value. Generalize similar intervals on the same feature, weight by support, and keep different targets' intervals separated. Answer with one line per target in exactly this format:\n\
If [Target]=<value>, Then <feature> <operator> <number> and ...\n\
Use only the operators <, <=, >, >=, =. If a target needs no conditions write: If [Target]=<value>, Then (no constraints)\n\
Output only the merged rules.";

pub const DEFAULT_AGGREGATE_TEMPLATE: &str = "Below are several independently derived rule sets for the same dataset, separated by blank lines.\n\
{rule_sets}\n\n\
Produce one consensus rule per target: keep a condition only when most rule sets contain it and average its thresholds. Answer one line per target:\n\
If [Target]=<value>, Then <feature> <operator> <number> and ...\n\
Output only the consensus rules.";

#[derive(Debug, Clone, PartialEq)]
pub struct Templates {
    pub generate: PromptTemplate,
    pub unguided: PromptTemplate,
    pub merge: PromptTemplate,
    pub aggregate: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            generate: PromptTemplate::new(DEFAULT_GENERATE_TEMPLATE),
            unguided: PromptTemplate::new(DEFAULT_UNGUIDED_TEMPLATE),
            merge: PromptTemplate::new(DEFAULT_MERGE_TEMPLATE),
            aggregate: PromptTemplate::new(DEFAULT_AGGREGATE_TEMPLATE),
        }
    }
}

/// How the rule body is phrased in generation prompts. `Natural` is an
/// ablation: prose carries the same intent but no machine-recoverable
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleForm {
    IfThen,
    Natural,
}

fn op_phrase(op: Op) -> &'static str {
    match op {
        Op::Lt => "below",
        Op::Le => "at most",
        Op::Gt => "above",
        Op::Ge => "at least",
        Op::Eq => "equal to",
    }
}

/// Prose paraphrase of a rule for the natural-form ablation.
pub fn render_natural(rule: &Rule) -> String {
    let target = match &rule.target {
        RuleTarget::Class(c) => format!("rows whose target is {c}"),
        RuleTarget::Interval { lo, hi } => {
            format!("rows whose target lies between {} and {}", format_sig(*lo), format_sig(*hi))
        }
    };
    if rule.conditions.is_empty() {
        return format!("Generate {target} with no further constraints.");
    }
    let parts: Vec<String> = rule
        .conditions
        .iter()
        .map(|c| {
            let v = match &c.value {
                Value::Num(x) => format_sig(*x),
                Value::Cat(s) => s.clone(),
            };
            format!("{} {} {}", c.feature, op_phrase(c.op), v)
        })
        .collect();
    format!("Generate {target}, keeping {}.", parts.join(" and "))
}

/// One line per column: name, kind, observed range or vocabulary, and the
/// schema description when present.
pub fn schema_description(schema: &Schema, stats: &ColumnStats) -> String {
    let mut out = String::new();
    for (i, col) in schema.columns.iter().enumerate() {
        out.push_str("- ");
        out.push_str(&col.name);
        match col.kind {
            ColumnKind::Numeric => {
                if let Some((lo, hi)) = stats.range(i) {
                    out.push_str(&format!(" (numeric, observed range [{}, {}])", format_sig(lo), format_sig(hi)));
                } else {
                    out.push_str(" (numeric)");
                }
            }
            ColumnKind::Categorical => {
                if let Some(vocab) = stats.vocabulary(i) {
                    let names: Vec<&str> = vocab.keys().map(String::as_str).collect();
                    out.push_str(&format!(" (categorical: {})", names.join(", ")));
                } else {
                    out.push_str(" (categorical)");
                }
                if col.open {
                    out.push_str(" (new categories allowed)");
                }
            }
        }
        if let Some(d) = &col.description {
            out.push_str(": ");
            out.push_str(d);
        }
        out.push('\n');
    }
    out
}

fn target_clause(target: &RuleTarget) -> String {
    match target {
        RuleTarget::Class(c) => format!("={c}"),
        RuleTarget::Interval { lo, hi } => format!(" in [{}, {}]", format_sig(*lo), format_sig(*hi)),
    }
}

fn task_kind(schema: &Schema) -> &'static str {
    match schema.task {
        Task::Classification { .. } => "classification",
        Task::Regression => "regression",
    }
}

pub fn build_generation_prompt(
    template: &PromptTemplate,
    rule: &Rule,
    schema: &Schema,
    stats: &ColumnStats,
    batch: usize,
    form: RuleForm,
) -> Result<String, GatewayError> {
    let rule_text = match form {
        RuleForm::IfThen => rules::render_rule(rule),
        RuleForm::Natural => render_natural(rule),
    };
    template.render(&[
        ("task_kind", task_kind(schema)),
        ("schema_description", &schema_description(schema, stats)),
        ("rule", &rule_text),
        ("target_clause", &target_clause(&rule.target)),
        ("target_name", &schema.target),
        ("batch_marker", BATCH_MARKER),
        ("batch_size", &format!("{batch}")),
    ])
}

/// Rule-free prompt for the generation-without-rules ablation: real rows
/// as few-shot examples instead of a rule.
pub fn build_unguided_prompt(
    template: &PromptTemplate,
    target: &RuleTarget,
    schema: &Schema,
    stats: &ColumnStats,
    examples: &Dataset,
    batch: usize,
) -> Result<String, GatewayError> {
    template.render(&[
        ("task_kind", task_kind(schema)),
        ("schema_description", &schema_description(schema, stats)),
        ("examples", examples.to_csv().trim_end()),
        ("target_clause", &target_clause(target)),
        ("target_name", &schema.target),
        ("batch_marker", BATCH_MARKER),
        ("batch_size", &format!("{batch}")),
    ])
}

/// Renders one path as a proto-rule line with its support. `NotEq`
/// predicates carry no interval information and are omitted, mirroring
/// what the deterministic merge uses.
pub fn render_path_line(target: &RuleTarget, path: &RawPath) -> String {
    let conditions: Vec<String> = path
        .predicates
        .iter()
        .filter(|p| p.op != PathOp::NotEq)
        .map(|p| {
            let op = match p.op {
                PathOp::Lt => "<",
                PathOp::Le => "<=",
                PathOp::Gt => ">",
                PathOp::Ge => ">=",
                PathOp::Eq => "=",
                PathOp::NotEq => unreachable!("filtered above"),
            };
            let v = match &p.value {
                Value::Num(x) => format_sig(*x),
                Value::Cat(s) => s.clone(),
            };
            format!("{} {} {}", p.feature, op, v)
        })
        .collect();
    let body = if conditions.is_empty() { "(no constraints)".to_string() } else { conditions.join(" and ") };
    format!("If [Target]{}, Then {} (support {})", target_clause(target), body, path.support)
}

pub fn build_merge_prompt(
    template: &PromptTemplate,
    groups: &[(RuleTarget, Vec<RawPath>)],
    _schema: &Schema,
) -> Result<String, GatewayError> {
    let mut lines = String::new();
    for (target, paths) in groups {
        for p in paths {
            lines.push_str(&render_path_line(target, p));
            lines.push('\n');
        }
    }
    template.render(&[("paths", lines.trim_end())])
}

/// Why a reply row was rejected; kept machine-readable for the manifest.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum RejectReason {
    CellCount,
    BadNumber { column: String },
    UnknownCategory { column: String },
    TargetMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBatch {
    pub accepted: Vec<Row>,
    /// (zero-based data-row index in the reply, reason).
    pub rejected: Vec<(usize, RejectReason)>,
}

/// Parses a model reply into typed rows: strips code fences, locates the
/// header (any column order), then validates each record. Rows failing
/// type, vocabulary or target checks are rejected individually; a short
/// reply simply yields fewer accepted rows.
pub fn parse_rows(
    reply: &str,
    schema: &Schema,
    stats: &ColumnStats,
    expected: &RuleTarget,
) -> Result<ParsedBatch, GatewayError> {
    let stripped: Vec<&str> = reply.lines().filter(|l| !l.trim_start().starts_with("```")).collect();
    let text = stripped.join("\n");
    let records = csv::parse_records(&text).map_err(|e| GatewayError::Backend(e.to_string()))?;

    let names: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let mut header: Option<Vec<usize>> = None; // reply position -> schema column
    let mut body_start = 0;
    for (i, rec) in records.iter().enumerate() {
        if rec.len() == names.len() {
            let mapping: Option<Vec<usize>> =
                rec.iter().map(|cell| names.iter().position(|n| *n == cell.trim())).collect();
            if let Some(m) = mapping {
                let mut sorted = m.clone();
                sorted.sort_unstable();
                if sorted == (0..names.len()).collect::<Vec<_>>() {
                    header = Some(m);
                    body_start = i + 1;
                    break;
                }
            }
        }
    }
    // Headerless replies are taken in schema order.
    let mapping = header.unwrap_or_else(|| (0..names.len()).collect());

    let target_col = schema.target_index();
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for (data_idx, rec) in records[body_start..].iter().enumerate() {
        if rec.len() != names.len() {
            rejected.push((data_idx, RejectReason::CellCount));
            continue;
        }
        let mut row: Vec<Option<Value>> = alloc::vec![None; names.len()];
        let mut reject: Option<RejectReason> = None;
        for (pos, cell) in rec.iter().enumerate() {
            let col = mapping[pos];
            let def = &schema.columns[col];
            let cell = cell.trim();
            let value = match def.kind {
                ColumnKind::Numeric => match cell.parse::<f64>().ok().filter(|x| x.is_finite()) {
                    Some(x) => Value::Num(x),
                    None => {
                        reject = Some(RejectReason::BadNumber { column: def.name.clone() });
                        break;
                    }
                },
                ColumnKind::Categorical => {
                    let known = stats.vocabulary(col).is_some_and(|v| v.contains_key(cell));
                    if !known && !def.open && col != target_col {
                        reject = Some(RejectReason::UnknownCategory { column: def.name.clone() });
                        break;
                    }
                    Value::Cat(cell.to_string())
                }
            };
            row[col] = Some(value);
        }
        if let Some(r) = reject {
            rejected.push((data_idx, r));
            continue;
        }
        let row: Row = row.into_iter().map(|v| v.expect("every column filled")).collect();
        let ok = match expected {
            RuleTarget::Class(c) => &row[target_col].render() == c,
            RuleTarget::Interval { lo, hi } => {
                row[target_col].as_num().is_some_and(|y| y >= *lo && y <= *hi)
            }
        };
        if ok {
            accepted.push(row);
        } else {
            rejected.push((data_idx, RejectReason::TargetMismatch));
        }
    }
    Ok(ParsedBatch { accepted, rejected })
}

/// Redundancy shape of the mock backend's output: with probability
/// `redundancy` a row is a jittered copy of one of `anchors` fixed rows.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MockProfile {
    pub redundancy: f64,
    pub anchors: usize,
}

impl Default for MockProfile {
    fn default() -> Self {
        MockProfile { redundancy: 0.0, anchors: 3 }
    }
}

const MAX_SAMPLE_TRIES: usize = 64;
const JITTER_FRACTION: f64 = 0.005;

/// Samples `n` rows satisfying `rule` (at redundancy 0), deterministically
/// in `seed`. Numeric features draw uniformly from the rule's interval
/// intersected with the observed column range; categoricals draw from the
/// observed vocabulary weighted by frequency. Errors when the rule rejects
/// every sample.
pub fn mock_generate(
    rule: &Rule,
    schema: &Schema,
    stats: &ColumnStats,
    n: usize,
    seed: u64,
    profile: &MockProfile,
) -> Result<Vec<Row>, GatewayError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<Row> = (0..profile.anchors.max(1))
        .map(|_| fresh_row(rule, schema, stats, &mut rng))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() < profile.redundancy {
            let a = &anchors[rng.random_range(0..anchors.len())];
            out.push(jitter(a, schema, stats, &mut rng));
        } else {
            out.push(fresh_row(rule, schema, stats, &mut rng)?);
        }
    }
    Ok(out)
}

fn fresh_row(
    rule: &Rule,
    schema: &Schema,
    stats: &ColumnStats,
    rng: &mut ChaCha8Rng,
) -> Result<Row, GatewayError> {
    let target_col = schema.target_index();
    for _ in 0..MAX_SAMPLE_TRIES {
        let mut row = Vec::with_capacity(schema.columns.len());
        for (c, def) in schema.columns.iter().enumerate() {
            if c == target_col {
                row.push(sample_target(&rule.target, def.kind, rng));
                continue;
            }
            row.push(sample_feature(c, def, rule, stats, rng));
        }
        if rules::satisfies(&row, rule, schema) {
            return Ok(row);
        }
    }
    Err(GatewayError::Unsatisfiable(rules::render_rule(rule)))
}

fn sample_target(target: &RuleTarget, kind: ColumnKind, rng: &mut ChaCha8Rng) -> Value {
    match target {
        RuleTarget::Class(c) => match kind {
            ColumnKind::Numeric => Value::Num(c.parse().expect("numeric class labels are canonical numeric text")),
            ColumnKind::Categorical => Value::Cat(c.clone()),
        },
        RuleTarget::Interval { lo, hi } => {
            Value::Num(if lo == hi { *lo } else { rng.random_range(*lo..=*hi) })
        }
    }
}

fn sample_feature(
    col: usize,
    def: &crate::data::ColumnDef,
    rule: &Rule,
    stats: &ColumnStats,
    rng: &mut ChaCha8Rng,
) -> Value {
    let conditions: Vec<&Condition> = rule.conditions.iter().filter(|c| c.feature == def.name).collect();
    match def.kind {
        ColumnKind::Numeric => {
            let (mut lo, mut hi) = stats.range(col).expect("numeric column has a range");
            for c in &conditions {
                match (c.op, &c.value) {
                    (Op::Gt | Op::Ge, Value::Num(v)) => lo = lo.max(*v),
                    (Op::Lt | Op::Le, Value::Num(v)) => hi = hi.min(*v),
                    (Op::Eq, Value::Num(v)) => {
                        return Value::Num(*v);
                    }
                    _ => {}
                }
            }
            if lo > hi {
                // Rule interval lies outside the observed range; honor the
                // rule. The rejection loop arbitrates genuine conflicts.
                core::mem::swap(&mut lo, &mut hi);
            }
            Value::Num(if lo == hi { lo } else { rng.random_range(lo..=hi) })
        }
        ColumnKind::Categorical => {
            if let Some(c) = conditions.iter().find(|c| c.op == Op::Eq) {
                if let Value::Cat(v) = &c.value {
                    return Value::Cat(v.clone());
                }
            }
            let vocab = stats.vocabulary(col).expect("categorical column has a vocabulary");
            let total: usize = vocab.values().sum();
            let mut pick = rng.random_range(0..total);
            for (value, count) in vocab {
                if pick < *count {
                    return Value::Cat(value.clone());
                }
                pick -= count;
            }
            unreachable!("pick < total")
        }
    }
}

/// Near-duplicate of an anchor: numeric cells move by at most ±0.5% of the
/// observed column range (clamped to it); categoricals and the target copy
/// through.
fn jitter(anchor: &Row, schema: &Schema, stats: &ColumnStats, rng: &mut ChaCha8Rng) -> Row {
    let target_col = schema.target_index();
    anchor
        .iter()
        .enumerate()
        .map(|(c, v)| match v {
            Value::Num(x) if c != target_col => {
                let (lo, hi) = stats.range(c).expect("numeric column has a range");
                let width = hi - lo;
                let moved = x + (rng.random::<f64>() * 2.0 - 1.0) * JITTER_FRACTION * width;
                Value::Num(moved.clamp(lo.min(*x), hi.max(*x)))
            }
            other => other.clone(),
        })
        .collect()
}

/// Deterministic stand-in for a hosted model. Generation prompts are
/// answered by [`mock_generate`]; merge prompts by re-parsing the proto
/// rules and running the deterministic merge. Each call advances an
/// atomic counter that salts the sampling seed, so repeated batches for
/// one rule differ while the overall sequence stays reproducible.
#[derive(Debug)]
pub struct MockGateway {
    schema: Schema,
    stats: ColumnStats,
    profile: MockProfile,
    seed: u64,
    calls: AtomicU64,
}

impl MockGateway {
    pub fn new(schema: Schema, stats: ColumnStats, profile: MockProfile, seed: u64) -> Self {
        MockGateway { schema, stats, profile, seed, calls: AtomicU64::new(0) }
    }

    fn answer_generation(&self, prompt: &str, call: u64) -> Result<String, GatewayError> {
        let batch = parse_batch_size(prompt).ok_or(GatewayError::UnparseablePrompt)?;
        // Prefer the full rendered rule; fall back to the bare target
        // clause (rule-free or natural-form prompts).
        let rule = rules::parse_rules(prompt, &self.schema)
            .ok()
            .and_then(|rs| rs.rules.into_iter().next())
            .or_else(|| {
                let line = prompt.lines().find_map(|l| l.trim().strip_prefix(TARGET_MARKER))?;
                let target = line.split(" for every row").next()?.trim_end_matches(['.', ' ']);
                rules::parse_rules(&format!("If [Target]{target}, Then (no constraints)"), &self.schema)
                    .ok()
                    .and_then(|rs| rs.rules.into_iter().next())
            })
            .ok_or(GatewayError::UnparseablePrompt)?;
        let rows = mock_generate(&rule, &self.schema, &self.stats, batch, seed::mix(self.seed, call), &self.profile)?;
        let mut records: Vec<Vec<String>> =
            alloc::vec![self.schema.columns.iter().map(|c| c.name.clone()).collect()];
        records.extend(rows.iter().map(|r| r.iter().map(Value::render).collect::<Vec<String>>()));
        Ok(csv::write_records(&records))
    }

    fn answer_merge(&self, prompt: &str) -> Result<String, GatewayError> {
        let mut groups: Vec<(RuleTarget, Vec<RawPath>)> = Vec::new();
        for line in prompt.lines() {
            if !line.contains("If [Target]") {
                continue;
            }
            // The support suffix distinguishes proto-rule lines from the
            // format examples in the template's instructions.
            let Some((body, support)) = split_support(line) else {
                continue;
            };
            let Ok(rs) = rules::parse_rules(body, &self.schema) else {
                continue;
            };
            let Some(rule) = rs.rules.into_iter().next() else {
                continue;
            };
            let predicates = rule
                .conditions
                .iter()
                .map(|c| crate::forest::PathPredicate {
                    feature: c.feature.clone(),
                    op: match c.op {
                        Op::Lt => PathOp::Lt,
                        Op::Le => PathOp::Le,
                        Op::Gt => PathOp::Gt,
                        Op::Ge => PathOp::Ge,
                        Op::Eq => PathOp::Eq,
                    },
                    value: c.value.clone(),
                })
                .collect();
            let outcome = match &rule.target {
                RuleTarget::Class(c) => crate::forest::PathOutcome::Class(c.clone()),
                RuleTarget::Interval { lo, .. } => crate::forest::PathOutcome::Value(*lo),
            };
            let path = RawPath { predicates, outcome, support };
            match groups.iter_mut().find(|(t, _)| *t == rule.target) {
                Some((_, paths)) => paths.push(path),
                None => groups.push((rule.target, alloc::vec![path])),
            }
        }
        if groups.is_empty() {
            return Err(GatewayError::UnparseablePrompt);
        }
        let merged = rules::merge_deterministic(&groups, &self.schema, &self.stats)
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        Ok(merged.render())
    }
}

fn parse_batch_size(prompt: &str) -> Option<usize> {
    let at = prompt.find(BATCH_MARKER)?;
    prompt[at + BATCH_MARKER.len()..]
        .split_whitespace()
        .next()?
        .parse()
        .ok()
}

fn split_support(line: &str) -> Option<(&str, usize)> {
    let at = line.rfind(" (support ")?;
    let tail = &line[at + " (support ".len()..];
    let support = tail.strip_suffix(')')?.trim().parse().ok()?;
    Some((&line[..at], support))
}

impl ChatCompleter for MockGateway {
    fn complete(&self, prompt: &str) -> Result<String, GatewayError> {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        if prompt.contains(BATCH_MARKER) {
            self.answer_generation(prompt, call)
        } else if prompt.contains("If [Target]") {
            self.answer_merge(prompt)
        } else {
            Err(GatewayError::UnparseablePrompt)
        }
    }
}
