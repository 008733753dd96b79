//! Conjunctive if–then rules distilled from forest paths.
//!
//! One rule per target value: `If [Target]=t, Then C_1 and ... and C_m`,
//! each condition comparing one feature with `<`, `<=`, `>`, `>=` or `=`.
//! The deterministic merge turns a target's paths into a single rule by
//! support-weighted bound averaging, then separates overlapping class
//! intervals at the overlap midpoint. Aggregation across independently
//! seeded runs keeps only conditions present in a majority of runs and
//! averages their bounds, which damps the variance of any single forest.
//!
//! Rules render to a fixed textual form (4 significant digits) that also
//! parses back, because the same format flows through prompts and must be
//! recoverable from model replies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnStats, Row, Schema, Value};
use crate::forest::{PathOp, RawPath};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("target {0} has no paths to merge")]
    EmptyTarget(String),
    #[error("duplicate target {0}")]
    DuplicateTarget(String),
    #[error("expected {expected} rule sets to aggregate, got {found}")]
    BadRunCount { expected: usize, found: usize },
    #[error("rule sets disagree on the target set")]
    TargetSetMismatch,
    #[error("no rules found in text")]
    NoRules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleTarget {
    Class(String),
    Interval { lo: f64, hi: f64 },
}

impl RuleTarget {
    /// Total order: classes lexicographically, intervals by lower bound;
    /// classes sort before intervals (the two never mix in practice).
    pub fn order_cmp(&self, other: &RuleTarget) -> core::cmp::Ordering {
        use core::cmp::Ordering;
        match (self, other) {
            (RuleTarget::Class(a), RuleTarget::Class(b)) => a.cmp(b),
            (RuleTarget::Interval { lo: a, .. }, RuleTarget::Interval { lo: b, .. }) => {
                a.partial_cmp(b).unwrap_or(Ordering::Equal)
            }
            (RuleTarget::Class(_), RuleTarget::Interval { .. }) => Ordering::Less,
            (RuleTarget::Interval { .. }, RuleTarget::Class(_)) => Ordering::Greater,
        }
    }

    /// The target as it appears after `[Target]` in rendered rules.
    pub fn render(&self) -> String {
        match self {
            RuleTarget::Class(c) => format!("={c}"),
            RuleTarget::Interval { lo, hi } => format!(" in [{}, {}]", format_sig(*lo), format_sig(*hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Op,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub target: RuleTarget,
    pub conditions: Vec<Condition>,
}

/// One rule per target, ordered by target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn rule_for(&self, target: &RuleTarget) -> Option<&Rule> {
        self.rules.iter().find(|r| &r.target == target)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&render_rule(r));
            out.push('\n');
        }
        out
    }
}

/// Formats to 4 significant digits: `2.0` -> `2.000`, `86.5` -> `86.50`,
/// `123456.0` -> `123500`.
pub fn format_sig(x: f64) -> String {
    const DIGITS: i32 = 4;
    if x == 0.0 {
        return String::from("0.000");
    }
    // Exponent recovered from scientific notation; avoids log10 edge cases
    // at exact powers of ten.
    let sci = format!("{x:e}");
    let exp: i32 = sci[sci.find('e').expect("scientific notation") + 1..]
        .parse()
        .expect("well-formed exponent");
    let decimals = DIGITS - 1 - exp;
    if decimals >= 0 {
        format!("{x:.*}", decimals as usize)
    } else {
        let scale = num_traits::Float::powi(10f64, -decimals);
        let rounded = num_traits::Float::round(x / scale) * scale;
        format!("{rounded:.0}")
    }
}

pub fn render_rule(rule: &Rule) -> String {
    let mut out = format!("If [Target]{}, Then ", rule.target.render());
    if rule.conditions.is_empty() {
        out.push_str("(no constraints)");
        return out;
    }
    for (i, c) in rule.conditions.iter().enumerate() {
        if i > 0 {
            out.push_str(" and ");
        }
        let value = match &c.value {
            Value::Num(x) => format_sig(*x),
            Value::Cat(s) => s.clone(),
        };
        out.push_str(&format!("{} {} {}", c.feature, c.op.symbol(), value));
    }
    out
}

/// True iff the row satisfies every condition of the rule (the target is
/// the rule's premise, not part of the check).
pub fn satisfies(row: &Row, rule: &Rule, schema: &Schema) -> bool {
    rule.conditions.iter().all(|c| {
        let Some(col) = schema.column_index(&c.feature) else {
            return false;
        };
        match (&row[col], &c.value) {
            (Value::Num(x), Value::Num(v)) => match c.op {
                Op::Lt => x < v,
                Op::Le => x <= v,
                Op::Gt => x > v,
                Op::Ge => x >= v,
                Op::Eq => x == v,
            },
            (Value::Cat(x), Value::Cat(v)) => c.op == Op::Eq && x == v,
            _ => false,
        }
    })
}

/// Accumulated bounds for one (target, feature) pair during merging.
#[derive(Debug, Default, Clone)]
struct FeatureAcc {
    lower: Vec<(f64, usize, bool)>, // (value, support, strict)
    upper: Vec<(f64, usize, bool)>,
    eq: Vec<(Value, usize)>,
}

#[derive(Debug, Default, Clone)]
struct FeatureBounds {
    lower: Option<(f64, Op)>,
    upper: Option<(f64, Op)>,
    eq: Option<Value>,
}

fn weighted_mean(entries: &[(f64, usize, bool)]) -> (f64, bool) {
    let any_strict = entries.iter().any(|(_, _, strict)| *strict);
    if entries.windows(2).all(|w| w[0].0 == w[1].0) {
        return (entries[0].0, any_strict);
    }
    let weight: f64 = entries.iter().map(|(_, s, _)| *s as f64).sum();
    let sum: f64 = entries.iter().map(|(v, s, _)| v * *s as f64).sum();
    (sum / weight, any_strict)
}

fn resolve_feature(acc: &FeatureAcc) -> FeatureBounds {
    let mut out = FeatureBounds::default();
    if !acc.eq.is_empty() {
        // Kept only under exact category agreement across every path that
        // constrains the feature.
        let first = &acc.eq[0].0;
        if acc.eq.iter().all(|(v, _)| v == first) {
            out.eq = Some(first.clone());
        }
        return out;
    }
    let lower = (!acc.lower.is_empty()).then(|| weighted_mean(&acc.lower));
    let upper = (!acc.upper.is_empty()).then(|| weighted_mean(&acc.upper));
    if let (Some((lo, _)), Some((hi, _))) = (lower, upper) {
        if lo >= hi {
            // Paths pull in both directions past each other (the class
            // region is not one box). Keep the heavier side.
            let lo_support: usize = acc.lower.iter().map(|(_, s, _)| s).sum();
            let hi_support: usize = acc.upper.iter().map(|(_, s, _)| s).sum();
            if lo_support >= hi_support {
                let (v, strict) = lower.expect("checked above");
                out.lower = Some((v, if strict { Op::Gt } else { Op::Ge }));
            } else {
                let (v, strict) = upper.expect("checked above");
                out.upper = Some((v, if strict { Op::Lt } else { Op::Le }));
            }
            return out;
        }
    }
    out.lower = lower.map(|(v, strict)| (v, if strict { Op::Gt } else { Op::Ge }));
    out.upper = upper.map(|(v, strict)| (v, if strict { Op::Lt } else { Op::Le }));
    out
}

/// Merges each target's paths into one rule: per feature, the lower bound
/// is the support-weighted mean of the paths' lower bounds, likewise for
/// upper bounds; categorical equalities survive only under exact
/// agreement. Where two targets' intervals on a feature overlap, the
/// overlap is split at its midpoint and each side goes to the target whose
/// interval center (open ends closed by the observed feature range) is
/// nearer. `NotEq` path predicates carry no interval information and are
/// dropped.
pub fn merge_deterministic(
    groups: &[(RuleTarget, Vec<RawPath>)],
    schema: &Schema,
    stats: &ColumnStats,
) -> Result<RuleSet, RuleError> {
    let mut seen: Vec<&RuleTarget> = Vec::new();
    for (t, paths) in groups {
        if paths.is_empty() {
            return Err(RuleError::EmptyTarget(t.render()));
        }
        if seen.contains(&t) {
            return Err(RuleError::DuplicateTarget(t.render()));
        }
        seen.push(t);
    }

    let mut merged: Vec<(RuleTarget, BTreeMap<usize, FeatureBounds>)> = groups
        .iter()
        .map(|(target, paths)| {
            let mut acc: BTreeMap<usize, FeatureAcc> = BTreeMap::new();
            for path in paths {
                for p in &path.predicates {
                    let Some(col) = schema.column_index(&p.feature) else {
                        continue;
                    };
                    let slot = acc.entry(col).or_default();
                    match (p.op, &p.value) {
                        (PathOp::Gt, Value::Num(v)) => slot.lower.push((*v, path.support, true)),
                        (PathOp::Ge, Value::Num(v)) => slot.lower.push((*v, path.support, false)),
                        (PathOp::Lt, Value::Num(v)) => slot.upper.push((*v, path.support, true)),
                        (PathOp::Le, Value::Num(v)) => slot.upper.push((*v, path.support, false)),
                        (PathOp::Eq, v) => slot.eq.push((v.clone(), path.support)),
                        _ => {}
                    }
                }
            }
            let bounds: BTreeMap<usize, FeatureBounds> = acc
                .iter()
                .map(|(col, a)| (*col, resolve_feature(a)))
                .filter(|(_, b)| b.lower.is_some() || b.upper.is_some() || b.eq.is_some())
                .collect();
            (target.clone(), bounds)
        })
        .collect();
    merged.sort_by(|a, b| a.0.order_cmp(&b.0));

    separate_overlaps(&mut merged, schema, stats);

    let rules = merged
        .into_iter()
        .map(|(target, bounds)| Rule { target, conditions: conditions_in_schema_order(&bounds, schema) })
        .collect();
    Ok(RuleSet { rules })
}

fn conditions_in_schema_order(bounds: &BTreeMap<usize, FeatureBounds>, schema: &Schema) -> Vec<Condition> {
    let mut out = Vec::new();
    for (&col, b) in bounds {
        let feature = schema.columns[col].name.clone();
        if let Some(v) = &b.eq {
            out.push(Condition { feature: feature.clone(), op: Op::Eq, value: v.clone() });
        }
        if let Some((v, op)) = b.lower {
            out.push(Condition { feature: feature.clone(), op, value: Value::Num(v) });
        }
        if let Some((v, op)) = b.upper {
            out.push(Condition { feature, op, value: Value::Num(v) });
        }
    }
    out
}

fn separate_overlaps(
    merged: &mut [(RuleTarget, BTreeMap<usize, FeatureBounds>)],
    schema: &Schema,
    stats: &ColumnStats,
) {
    for col in schema.feature_indices() {
        if schema.columns[col].kind != ColumnKind::Numeric {
            continue;
        }
        let Some((range_lo, range_hi)) = stats.range(col) else {
            continue;
        };
        // Tightening only shrinks intervals, so one pass over ordered pairs
        // cannot create a new overlap.
        for i in 0..merged.len() {
            for j in i + 1..merged.len() {
                let (a, b) = {
                    let (head, tail) = merged.split_at_mut(j);
                    (&mut head[i].1, &mut tail[0].1)
                };
                let (Some(ba), Some(bb)) = (a.get(&col), b.get(&col)) else {
                    continue;
                };
                if ba.eq.is_some() || bb.eq.is_some() {
                    continue;
                }
                let span = |x: &FeatureBounds| {
                    (x.lower.map_or(range_lo, |(v, _)| v), x.upper.map_or(range_hi, |(v, _)| v))
                };
                let (alo, ahi) = span(ba);
                let (blo, bhi) = span(bb);
                let (olo, ohi) = (alo.max(blo), ahi.min(bhi));
                if olo >= ohi {
                    continue;
                }
                let mid = olo + (ohi - olo) / 2.0;
                // The interval whose center sits lower takes the low side;
                // exact center ties go to the earlier target.
                let a_low = (alo + ahi) / 2.0 <= (blo + bhi) / 2.0;
                let (low, high) = if a_low { (a, b) } else { (b, a) };
                let low = low.get_mut(&col).expect("bounds present");
                low.upper = Some((mid, Op::Le));
                if low.lower.is_some_and(|(v, _)| v >= mid) {
                    low.lower = None;
                }
                let high = high.get_mut(&col).expect("bounds present");
                high.lower = Some((mid, Op::Gt));
                if high.upper.is_some_and(|(v, _)| v <= mid) {
                    high.upper = None;
                }
            }
        }
    }
}

/// Identity of a condition for cross-run counting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Lower,
    Upper,
    Equal(String),
}

fn side_of(c: &Condition) -> Side {
    match c.op {
        Op::Gt | Op::Ge => Side::Lower,
        Op::Lt | Op::Le => Side::Upper,
        Op::Eq => Side::Equal(c.value.render()),
    }
}

/// Majority-vote aggregation over `g` independently produced rule sets: a
/// condition survives iff its (target, feature, side) identity appears in
/// at least ceil(g/2) runs; surviving numeric bounds take the unweighted
/// mean of the contributing runs' values.
pub fn aggregate(runs: &[RuleSet], g: usize) -> Result<RuleSet, RuleError> {
    if runs.len() != g || g == 0 {
        return Err(RuleError::BadRunCount { expected: g, found: runs.len() });
    }
    let key = |rs: &RuleSet| -> Vec<String> {
        let mut k: Vec<String> = rs.rules.iter().map(|r| r.target.render()).collect();
        k.sort();
        k
    };
    let first_key = key(&runs[0]);
    if runs[1..].iter().any(|r| key(r) != first_key) {
        return Err(RuleError::TargetSetMismatch);
    }
    let threshold = g.div_ceil(2);

    let mut targets: Vec<RuleTarget> = runs[0].rules.iter().map(|r| r.target.clone()).collect();
    targets.sort_by(|a, b| a.order_cmp(b));

    // Feature order: first appearance across runs, preserving the schema
    // order the merge emitted.
    let mut feature_order: Vec<String> = Vec::new();
    for rs in runs {
        for r in &rs.rules {
            for c in &r.conditions {
                if !feature_order.contains(&c.feature) {
                    feature_order.push(c.feature.clone());
                }
            }
        }
    }

    let mut rules = Vec::with_capacity(targets.len());
    for target in targets {
        // (feature, side) -> per-run contributions.
        let mut tally: BTreeMap<(usize, Side), Vec<&Condition>> = BTreeMap::new();
        for rs in runs {
            let rule = rs.rules.iter().find(|r| r.target == target).expect("target sets match");
            let mut seen_ids: BTreeSet<(usize, Side)> = BTreeSet::new();
            for c in &rule.conditions {
                let f = feature_order.iter().position(|f| f == &c.feature).expect("collected above");
                let id = (f, side_of(c));
                // A well-formed rule has one condition per identity; count
                // each run once regardless.
                if seen_ids.insert(id.clone()) {
                    tally.entry(id).or_default().push(c);
                }
            }
        }
        let mut kept: BTreeMap<usize, FeatureBounds> = BTreeMap::new();
        let mut eq_candidates: BTreeMap<usize, Vec<(&Condition, usize)>> = BTreeMap::new();
        for ((f, side), contributions) in &tally {
            if contributions.len() < threshold {
                continue;
            }
            match side {
                Side::Equal(_) => {
                    eq_candidates.entry(*f).or_default().push((contributions[0], contributions.len()));
                }
                Side::Lower | Side::Upper => {
                    let values: Vec<f64> =
                        contributions.iter().map(|c| c.value.as_num().expect("numeric bound")).collect();
                    // Identical bounds pass through bit-exactly; a computed
                    // mean of equal values need not.
                    let mean = if values.windows(2).all(|w| w[0] == w[1]) {
                        values[0]
                    } else {
                        values.iter().sum::<f64>() / values.len() as f64
                    };
                    let op = vote_op(contributions);
                    let slot = kept.entry(*f).or_default();
                    if *side == Side::Lower {
                        slot.lower = Some((mean, op));
                    } else {
                        slot.upper = Some((mean, op));
                    }
                }
            }
        }
        for (f, mut cands) in eq_candidates {
            // Two equality values can both clear the threshold only when g
            // is even; keep the better-supported one, tie toward the
            // smaller value, so the conjunction stays satisfiable.
            cands.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.value.render().cmp(&b.0.value.render())));
            kept.entry(f).or_default().eq = Some(cands[0].0.value.clone());
        }
        // Averaging distinct run subsets can cross the bounds; drop the
        // pair rather than emit an unsatisfiable interval.
        for b in kept.values_mut() {
            if let (Some((lo, _)), Some((hi, _))) = (b.lower, b.upper) {
                if lo >= hi {
                    b.lower = None;
                    b.upper = None;
                }
            }
            if let (Some(Value::Num(v)), true) = (&b.eq, b.lower.is_some() || b.upper.is_some()) {
                let inside = b.lower.is_none_or(|(lo, op)| if op == Op::Gt { *v > lo } else { *v >= lo })
                    && b.upper.is_none_or(|(hi, op)| if op == Op::Lt { *v < hi } else { *v <= hi });
                if !inside {
                    b.eq = None;
                }
            }
        }
        let mut conditions = Vec::new();
        for (f, b) in &kept {
            let feature = feature_order[*f].clone();
            if let Some(v) = &b.eq {
                conditions.push(Condition { feature: feature.clone(), op: Op::Eq, value: v.clone() });
            }
            if let Some((v, op)) = b.lower {
                conditions.push(Condition { feature: feature.clone(), op, value: Value::Num(v) });
            }
            if let Some((v, op)) = b.upper {
                conditions.push(Condition { feature, op, value: Value::Num(v) });
            }
        }
        rules.push(Rule { target, conditions });
    }
    Ok(RuleSet { rules })
}

fn vote_op(contributions: &[&Condition]) -> Op {
    let strict = contributions.iter().filter(|c| matches!(c.op, Op::Gt | Op::Lt)).count();
    let lax = contributions.len() - strict;
    let majority_strict = strict >= lax; // tie goes to the stricter form
    match contributions[0].op {
        Op::Gt | Op::Ge => {
            if majority_strict {
                Op::Gt
            } else {
                Op::Ge
            }
        }
        Op::Lt | Op::Le => {
            if majority_strict {
                Op::Lt
            } else {
                Op::Le
            }
        }
        Op::Eq => Op::Eq,
    }
}

/// Parses rendered rules back out of free text (e.g. a model reply).
/// Lines without an `If [Target]` clause are ignored; conditions on
/// unknown features, with values of the wrong type, or with non-equality
/// operators on categorical columns are dropped while the rest of the
/// rule is kept.
pub fn parse_rules(text: &str, schema: &Schema) -> Result<RuleSet, RuleError> {
    let mut rules: Vec<Rule> = Vec::new();
    for line in text.lines() {
        let Some(at) = line.find("If [Target]") else {
            continue;
        };
        let rest = &line[at + "If [Target]".len()..];
        let Some((target_text, cond_text)) = rest.split_once(", Then") else {
            continue;
        };
        let Some(target) = parse_target(target_text) else {
            continue;
        };
        if rules.iter().any(|r| r.target == target) {
            return Err(RuleError::DuplicateTarget(target.render()));
        }
        let mut conditions = Vec::new();
        let cond_text = cond_text.trim();
        if !cond_text.is_empty() && cond_text != "(no constraints)" {
            for chunk in cond_text.split(" and ") {
                if let Some(c) = parse_condition(chunk.trim().trim_end_matches('.'), schema) {
                    conditions.push(c);
                }
            }
        }
        rules.push(Rule { target, conditions });
    }
    if rules.is_empty() {
        return Err(RuleError::NoRules);
    }
    rules.sort_by(|a, b| a.target.order_cmp(&b.target));
    Ok(RuleSet { rules })
}

fn parse_target(text: &str) -> Option<RuleTarget> {
    if let Some(class) = text.strip_prefix('=') {
        let class = class.trim();
        (!class.is_empty()).then(|| RuleTarget::Class(class.to_string()))
    } else {
        let inner = text.trim().strip_prefix("in [")?.strip_suffix(']')?;
        let (lo, hi) = inner.split_once(',')?;
        let lo: f64 = lo.trim().parse().ok()?;
        let hi: f64 = hi.trim().parse().ok()?;
        (lo <= hi && lo.is_finite() && hi.is_finite()).then_some(RuleTarget::Interval { lo, hi })
    }
}

fn parse_condition(text: &str, schema: &Schema) -> Option<Condition> {
    // Two-character operators first so ">=" is not read as ">".
    const OPS: [(&str, Op); 5] = [(">=", Op::Ge), ("<=", Op::Le), (">", Op::Gt), ("<", Op::Lt), ("=", Op::Eq)];
    let (at, (sym, op)) = OPS
        .iter()
        .filter_map(|entry| text.find(entry.0).map(|i| (i, *entry)))
        .min_by_key(|(i, (sym, _))| (*i, core::cmp::Reverse(sym.len())))?;
    let feature = text[..at].trim();
    let value_text = text[at + sym.len()..].trim();
    let col = schema.column_index(feature)?;
    let value = match schema.columns[col].kind {
        ColumnKind::Numeric => Value::Num(value_text.parse::<f64>().ok().filter(|v| v.is_finite())?),
        ColumnKind::Categorical => {
            if op != Op::Eq {
                return None;
            }
            Value::Cat(value_text.to_string())
        }
    };
    Some(Condition { feature: feature.to_string(), op, value })
}
