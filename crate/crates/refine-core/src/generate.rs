//! Rule extraction and the generation loop.
//!
//! Extraction runs G independent forest trainings, merges each run's top
//! tree paths into one rule per target, and aggregates the runs by
//! majority vote. Every target present in the training data gets a rule
//! in every run — a target whose paths all vanish contributes an empty
//! proto rule — so the aggregation always sees identical target sets.
//!
//! Generation walks the quota plan target by target, prompting in batches
//! and keeping only rows that survive [`crate::gateway::parse_rows`].
//! Batches are sequential on purpose: each call advances the backend's
//! call counter, and a fixed call order is what makes two runs of the
//! same configuration byte-identical.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{column_stats, DataError, Dataset, Provenance, Task};
use crate::forest::{
    bin_regression_targets, extract_paths, interval_index, train_forest, select_top_k, Forest,
    ForestError, ForestParams, LeafOutcome, PathOutcome, RawPath,
};
use crate::gateway::{
    build_generation_prompt, build_merge_prompt, build_unguided_prompt, parse_rows, ChatCompleter,
    GatewayError, RuleForm, Templates,
};
use crate::rules::{aggregate, merge_deterministic, parse_rules, Rule, RuleError, RuleSet, RuleTarget};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no rule for planned target {0}")]
    MissingRule(String),
    #[error("training data yields no generation targets")]
    NoTargets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Deterministic,
    Llm,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Independent extraction runs feeding the majority vote.
    pub g: usize,
    /// Trees kept per run, ranked by standalone training accuracy.
    pub k: usize,
    pub forest: ForestParams,
    /// Regression only: number of target intervals.
    pub num_intervals: usize,
    pub merge: MergeMode,
    pub seed: u64,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            g: 5,
            k: 3,
            forest: ForestParams::default(),
            num_intervals: 3,
            merge: MergeMode::Deterministic,
            seed: 0,
        }
    }
}

/// Extraction result: the aggregated rule set plus the per-run sets it
/// was voted from (kept for reporting).
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub rules: RuleSet,
    pub runs: Vec<RuleSet>,
}

fn generation_targets(train: &Dataset, params: &RuleParams, snap: &[f64]) -> Result<Vec<RuleTarget>, GenerateError> {
    let targets = match train.schema.task {
        Task::Classification { .. } => {
            train.class_labels().into_iter().map(RuleTarget::Class).collect::<Vec<_>>()
        }
        Task::Regression => bin_regression_targets(train, params.num_intervals, snap)?
            .into_iter()
            .map(|(lo, hi)| RuleTarget::Interval { lo, hi })
            .collect(),
    };
    if targets.is_empty() {
        return Err(GenerateError::NoTargets);
    }
    Ok(targets)
}

/// Groups one run's top-tree paths by generation target, in target order.
/// Targets with no path get a single empty proto rule so downstream
/// merges emit a rule for them anyway.
fn run_groups(
    forest: &Forest,
    train: &Dataset,
    k: usize,
    targets: &[RuleTarget],
    bins: &[(f64, f64)],
) -> Result<Vec<(RuleTarget, Vec<RawPath>)>, GenerateError> {
    let mut groups: Vec<(RuleTarget, Vec<RawPath>)> =
        targets.iter().map(|t| (t.clone(), Vec::new())).collect();
    for tree in select_top_k(forest, train, k)? {
        for path in extract_paths(forest, tree) {
            let slot = match &path.outcome {
                PathOutcome::Class(label) => groups
                    .iter_mut()
                    .find(|(t, _)| matches!(t, RuleTarget::Class(c) if c == label)),
                PathOutcome::Value(v) => Some(&mut groups[interval_index(bins, *v)]),
            };
            if let Some((_, paths)) = slot {
                paths.push(path);
            }
        }
    }
    for (target, paths) in &mut groups {
        if paths.is_empty() {
            let outcome = match target {
                RuleTarget::Class(c) => PathOutcome::Class(c.clone()),
                RuleTarget::Interval { lo, .. } => PathOutcome::Value(*lo),
            };
            paths.push(RawPath { predicates: Vec::new(), outcome, support: 0 });
        }
    }
    Ok(groups)
}

/// Runs the full extraction: G forests, per-run merge (deterministic or
/// via the completer), then majority aggregation. Regression interval
/// edges are snapped once, to the leaf values of run 0's best tree, so
/// every run shares the same target set.
pub fn extract_rules(
    train: &Dataset,
    params: &RuleParams,
    templates: &Templates,
    completer: &dyn ChatCompleter,
) -> Result<Extraction, GenerateError> {
    let stats = column_stats(train)?;
    let forest_for = |run: u64| {
        let fp = ForestParams { seed: seed::mix(params.seed, run), ..params.forest };
        train_forest(train, &fp)
    };
    let first = forest_for(0)?;

    let snap: Vec<f64> = match train.schema.task {
        Task::Regression => {
            let best = select_top_k(&first, train, 1)?[0];
            first.trees[best]
                .leaves()
                .filter_map(|l| match l.outcome {
                    LeafOutcome::Mean(v) => Some(v),
                    LeafOutcome::Counts(_) => None,
                })
                .collect()
        }
        Task::Classification { .. } => Vec::new(),
    };
    let targets = generation_targets(train, params, &snap)?;
    let bins: Vec<(f64, f64)> = targets
        .iter()
        .filter_map(|t| match t {
            RuleTarget::Interval { lo, hi } => Some((*lo, *hi)),
            RuleTarget::Class(_) => None,
        })
        .collect();

    let mut runs = Vec::with_capacity(params.g);
    for run in 0..params.g {
        let forest = if run == 0 { first.clone() } else { forest_for(run as u64)? };
        let groups = run_groups(&forest, train, params.k, &targets, &bins)?;
        let merged = match params.merge {
            MergeMode::Deterministic => merge_deterministic(&groups, &train.schema, &stats)?,
            MergeMode::Llm => {
                let prompt = build_merge_prompt(&templates.merge, &groups, &train.schema)?;
                let reply = completer.complete(&prompt)?;
                parse_rules(&reply, &train.schema)?
            }
        };
        runs.push(merged);
    }
    let rules = aggregate(&runs, params.g)?;
    Ok(Extraction { rules, runs })
}

/// Near-equal split of `total` over the targets; the first `total % n`
/// targets absorb the remainder.
pub fn balance_quota(targets: &[RuleTarget], total: usize) -> Vec<(RuleTarget, usize)> {
    let n = targets.len();
    let base = total / n;
    let rem = total % n;
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), base + usize::from(i < rem)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPlan {
    pub quotas: Vec<(RuleTarget, usize)>,
}

pub fn plan_from_rules(rules: &RuleSet, total: usize) -> Result<GenerationPlan, GenerateError> {
    if rules.rules.is_empty() {
        return Err(GenerateError::NoTargets);
    }
    let targets: Vec<RuleTarget> = rules.rules.iter().map(|r| r.target.clone()).collect();
    Ok(GenerationPlan { quotas: balance_quota(&targets, total) })
}

/// Plan for rule-free generation: targets come straight from the training
/// data (class labels, or unsnapped quantile intervals for regression).
pub fn plan_from_train(
    train: &Dataset,
    num_intervals: usize,
    total: usize,
) -> Result<GenerationPlan, GenerateError> {
    let params = RuleParams { num_intervals, ..RuleParams::default() };
    let targets = generation_targets(train, &params, &[])?;
    Ok(GenerationPlan { quotas: balance_quota(&targets, total) })
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GenParams {
    /// Rows requested per model call.
    pub batch: usize,
    pub form: RuleForm,
    /// Cap on calls per target; 0 derives one from the quota.
    pub max_attempts: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { batch: 50, form: RuleForm::IfThen, max_attempts: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TargetReport {
    pub target: String,
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GenReport {
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub calls: usize,
    pub targets: Vec<TargetReport>,
}

impl GenReport {
    /// Fraction of the quota actually delivered.
    pub fn fill_fraction(&self) -> f64 {
        if self.requested == 0 {
            return 1.0;
        }
        self.accepted as f64 / self.requested as f64
    }
}

const EMPTY_BATCH_LIMIT: usize = 3;
const UNGUIDED_EXAMPLE_CAP: usize = 16;

/// Generates rows per the plan. With `rules` each target's prompt carries
/// its rule; without, prompts fall back to few-shot examples from
/// `train`. Backend errors stop only the affected target — the shortfall
/// shows up in the report rather than aborting the run.
pub fn generate_rows(
    plan: &GenerationPlan,
    rules: Option<&RuleSet>,
    train: &Dataset,
    completer: &dyn ChatCompleter,
    templates: &Templates,
    gen: &GenParams,
) -> Result<(Dataset, GenReport), GenerateError> {
    let schema = &train.schema;
    let stats = column_stats(train)?;
    let examples = train.subset(&(0..train.len().min(UNGUIDED_EXAMPLE_CAP)).collect::<Vec<_>>());

    let mut rows = Vec::new();
    let mut report = GenReport { requested: 0, accepted: 0, rejected: 0, calls: 0, targets: Vec::new() };
    for (target, quota) in &plan.quotas {
        let rule: Option<&Rule> = match rules {
            Some(rs) => Some(
                rs.rule_for(target)
                    .ok_or_else(|| GenerateError::MissingRule(target.render()))?,
            ),
            None => None,
        };
        let mut tr = TargetReport {
            target: target.render(),
            requested: *quota,
            accepted: 0,
            rejected: 0,
            calls: 0,
            error: None,
        };
        let max_attempts = if gen.max_attempts > 0 {
            gen.max_attempts
        } else {
            2 * quota.div_ceil(gen.batch.max(1)) + 2
        };
        let mut remaining = *quota;
        let mut empty_streak = 0;
        while remaining > 0 && tr.calls < max_attempts {
            let n = remaining.min(gen.batch.max(1));
            let prompt = match rule {
                Some(r) => build_generation_prompt(&templates.generate, r, schema, &stats, n, gen.form)?,
                None => build_unguided_prompt(&templates.unguided, target, schema, &stats, &examples, n)?,
            };
            tr.calls += 1;
            let reply = match completer.complete(&prompt) {
                Ok(r) => r,
                Err(e) => {
                    tr.error = Some(e.to_string());
                    break;
                }
            };
            match parse_rows(&reply, schema, &stats, target) {
                Ok(batch) => {
                    let take = batch.accepted.len().min(remaining);
                    if take == 0 {
                        empty_streak += 1;
                        if empty_streak >= EMPTY_BATCH_LIMIT {
                            tr.error = Some("repeated batches yielded no usable rows".to_string());
                            break;
                        }
                    } else {
                        empty_streak = 0;
                    }
                    rows.extend(batch.accepted.into_iter().take(take));
                    remaining -= take;
                    tr.accepted += take;
                    tr.rejected += batch.rejected.len();
                }
                Err(e) => {
                    empty_streak += 1;
                    tr.error = Some(e.to_string());
                    if empty_streak >= EMPTY_BATCH_LIMIT {
                        break;
                    }
                }
            }
        }
        report.requested += tr.requested;
        report.accepted += tr.accepted;
        report.rejected += tr.rejected;
        report.calls += tr.calls;
        report.targets.push(tr);
    }
    let data = Dataset::new(schema.clone(), rows, Provenance::Synthetic)?;
    Ok((data, report))
}

/// The whole first stage in one call: extract rules, split the quota
/// across their targets, generate.
pub fn run_component_one(
    train: &Dataset,
    total: usize,
    rule_params: &RuleParams,
    gen: &GenParams,
    templates: &Templates,
    completer: &dyn ChatCompleter,
) -> Result<(RuleSet, Dataset, GenReport), GenerateError> {
    let extraction = extract_rules(train, rule_params, templates, completer)?;
    let plan = plan_from_rules(&extraction.rules, total)?;
    let (data, report) =
        generate_rows(&plan, Some(&extraction.rules), train, completer, templates, gen)?;
    Ok((extraction.rules, data, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InferOptions, Value};
    use crate::gateway::{MockGateway, MockProfile};
    use crate::rules::{Condition, Op};
    use alloc::format;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two planted boxes: class 1 iff x1 > 50 and x2 <= 40.
    fn planted(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("x1,x2,y\n");
        for _ in 0..n {
            let x1: f64 = rng.random_range(0.0..100.0);
            let x2: f64 = rng.random_range(0.0..100.0);
            let y = usize::from(x1 > 50.0 && x2 <= 40.0);
            text.push_str(&format!("{x1:.3},{x2:.3},{y}\n"));
        }
        Dataset::from_csv(&text, None, &InferOptions::default(), Provenance::Real).unwrap()
    }

    fn regression(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("x,y\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..10.0);
            let y = 2.0 * x + rng.random_range(-0.5..0.5);
            text.push_str(&format!("{x:.3},{y:.4}\n"));
        }
        let mut ds = Dataset::from_csv(&text, None, &InferOptions::default(), Provenance::Real).unwrap();
        ds.schema.task = Task::Regression;
        ds
    }

    fn mock_for(train: &Dataset, seed: u64) -> MockGateway {
        MockGateway::new(train.schema.clone(), column_stats(train).unwrap(), MockProfile::default(), seed)
    }

    #[test]
    fn balance_splits_near_equal_with_early_remainder() {
        let t: Vec<RuleTarget> = ["a", "b", "c"].iter().map(|s| RuleTarget::Class(s.to_string())).collect();
        let q = balance_quota(&t, 7);
        assert_eq!(q.iter().map(|(_, n)| *n).collect::<Vec<_>>(), vec![3, 2, 2]);
        let q = balance_quota(&t, 6);
        assert_eq!(q.iter().map(|(_, n)| *n).collect::<Vec<_>>(), vec![2, 2, 2]);
        let q = balance_quota(&t[..1], 5);
        assert_eq!(q[0].1, 5);
    }

    #[test]
    fn extraction_covers_every_class_and_recovers_planted_bounds() {
        let train = planted(80, 1);
        let params = RuleParams::default();
        let gw = mock_for(&train, 0);
        let out = extract_rules(&train, &params, &Templates::default(), &gw).unwrap();
        let targets: Vec<String> = out.rules.rules.iter().map(|r| r.target.render()).collect();
        assert_eq!(targets, vec!["=0", "=1"]);
        assert_eq!(out.runs.len(), 5);

        let one = out.rules.rule_for(&RuleTarget::Class("1".to_string())).unwrap();
        let x1 = one.conditions.iter().find(|c| c.feature == "x1").expect("x1 bound");
        assert!(matches!(x1.op, Op::Gt | Op::Ge));
        let v = x1.value.as_num().unwrap();
        assert!((v - 50.0).abs() < 15.0, "x1 bound {v} near 50");
        let x2 = one.conditions.iter().find(|c| c.feature == "x2").expect("x2 bound");
        assert!(matches!(x2.op, Op::Lt | Op::Le));
        let v = x2.value.as_num().unwrap();
        assert!((v - 40.0).abs() < 15.0, "x2 bound {v} near 40");
    }

    #[test]
    fn extraction_is_deterministic_in_the_seed() {
        let train = planted(60, 2);
        let params = RuleParams::default();
        let gw = mock_for(&train, 0);
        let a = extract_rules(&train, &params, &Templates::default(), &gw).unwrap();
        let b = extract_rules(&train, &params, &Templates::default(), &gw).unwrap();
        assert_eq!(a, b);
        let other = RuleParams { seed: 99, ..RuleParams::default() };
        let c = extract_rules(&train, &other, &Templates::default(), &gw).unwrap();
        assert_ne!(a.runs, c.runs, "different seed reshuffles the forests");
    }

    #[test]
    fn regression_extraction_targets_are_the_bins() {
        let train = regression(60, 3);
        let params = RuleParams::default();
        let gw = mock_for(&train, 0);
        let out = extract_rules(&train, &params, &Templates::default(), &gw).unwrap();
        assert_eq!(out.rules.rules.len(), 3);
        for r in &out.rules.rules {
            assert!(matches!(r.target, RuleTarget::Interval { .. }));
        }
        let lows: Vec<f64> = out
            .rules
            .rules
            .iter()
            .map(|r| match r.target {
                RuleTarget::Interval { lo, .. } => lo,
                _ => unreachable!(),
            })
            .collect();
        assert!(lows.windows(2).all(|w| w[0] < w[1]), "intervals ordered");
    }

    #[test]
    fn llm_merge_through_mock_matches_deterministic_structure() {
        let train = planted(60, 4);
        let gw = mock_for(&train, 0);
        let det = extract_rules(&train, &RuleParams::default(), &Templates::default(), &gw).unwrap();
        let llm = extract_rules(
            &train,
            &RuleParams { merge: MergeMode::Llm, ..RuleParams::default() },
            &Templates::default(),
            &gw,
        )
        .unwrap();
        let shape = |rs: &RuleSet| -> Vec<(String, Vec<(String, Op)>)> {
            rs.rules
                .iter()
                .map(|r| {
                    (r.target.render(), r.conditions.iter().map(|c| (c.feature.clone(), c.op)).collect())
                })
                .collect()
        };
        assert_eq!(shape(&det.rules), shape(&llm.rules));
    }

    #[test]
    fn generation_fills_the_plan_and_reports_it() {
        let train = planted(60, 5);
        let gw = mock_for(&train, 7);
        let ext = extract_rules(&train, &RuleParams::default(), &Templates::default(), &gw).unwrap();
        let plan = plan_from_rules(&ext.rules, 120).unwrap();
        let (data, report) =
            generate_rows(&plan, Some(&ext.rules), &train, &gw, &Templates::default(), &GenParams::default())
                .unwrap();
        assert_eq!(data.len(), 120);
        assert_eq!(data.provenance, Provenance::Synthetic);
        assert_eq!(report.accepted, 120);
        assert_eq!(report.requested, 120);
        assert!((report.fill_fraction() - 1.0).abs() < 1e-12);
        // 60 per target at batch 50 -> two calls each.
        assert_eq!(report.calls, 4);
        for (tr, (target, quota)) in report.targets.iter().zip(&plan.quotas) {
            assert_eq!(tr.target, target.render());
            assert_eq!(tr.accepted, *quota);
            assert!(tr.error.is_none());
        }
        // Every generated row satisfies its target's rule.
        for row in &data.rows {
            let label = row[2].render();
            let rule = ext.rules.rule_for(&RuleTarget::Class(label)).unwrap();
            assert!(crate::rules::satisfies(row, rule, &data.schema));
        }
    }

    #[test]
    fn generation_is_reproducible_per_gateway_seed() {
        let train = planted(60, 6);
        let ext = {
            let gw = mock_for(&train, 7);
            extract_rules(&train, &RuleParams::default(), &Templates::default(), &gw).unwrap()
        };
        let plan = plan_from_rules(&ext.rules, 80).unwrap();
        let run = |seed: u64| {
            let gw = mock_for(&train, seed);
            let (data, _) =
                generate_rows(&plan, Some(&ext.rules), &train, &gw, &Templates::default(), &GenParams::default())
                    .unwrap();
            data.to_csv()
        };
        assert_eq!(run(7), run(7), "same gateway seed, same bytes");
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn unguided_generation_uses_train_targets() {
        let train = planted(60, 8);
        let gw = mock_for(&train, 3);
        let plan = plan_from_train(&train, 3, 30).unwrap();
        let (data, report) =
            generate_rows(&plan, None, &train, &gw, &Templates::default(), &GenParams::default()).unwrap();
        assert_eq!(data.len(), 30);
        assert_eq!(report.targets.len(), 2);
        let labels = data.labels();
        assert_eq!(labels.iter().filter(|l| *l == "0").count(), 15);
        assert_eq!(labels.iter().filter(|l| *l == "1").count(), 15);
    }

    #[test]
    fn backend_failure_shows_up_as_shortfall_not_abort() {
        struct Flaky;
        impl ChatCompleter for Flaky {
            fn complete(&self, _prompt: &str) -> Result<String, GatewayError> {
                Err(GatewayError::Backend("boom".to_string()))
            }
        }
        let train = planted(40, 9);
        let gw = mock_for(&train, 0);
        let ext = extract_rules(&train, &RuleParams::default(), &Templates::default(), &gw).unwrap();
        let plan = plan_from_rules(&ext.rules, 20).unwrap();
        let (data, report) =
            generate_rows(&plan, Some(&ext.rules), &train, &Flaky, &Templates::default(), &GenParams::default())
                .unwrap();
        assert_eq!(data.len(), 0);
        assert_eq!(report.accepted, 0);
        assert!(report.targets.iter().all(|t| t.error.is_some()));
        assert!(report.fill_fraction() < 0.9);
    }

    #[test]
    fn missing_rule_for_planned_target_errors() {
        let train = planted(40, 10);
        let gw = mock_for(&train, 0);
        let rules = RuleSet {
            rules: vec![Rule {
                target: RuleTarget::Class("0".to_string()),
                conditions: vec![Condition {
                    feature: "x1".to_string(),
                    op: Op::Le,
                    value: Value::Num(50.0),
                }],
            }],
        };
        let plan = GenerationPlan {
            quotas: vec![(RuleTarget::Class("1".to_string()), 10)],
        };
        assert!(matches!(
            generate_rows(&plan, Some(&rules), &train, &gw, &Templates::default(), &GenParams::default()),
            Err(GenerateError::MissingRule(_))
        ));
    }
}
