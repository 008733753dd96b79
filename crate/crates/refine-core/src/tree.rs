//! Shared CART induction: one split-search engine grown either on class
//! labels (Gini impurity) or on real-valued targets (variance reduction).
//! The forest and the boosted reference model both build on it.
//!
//! Determinism contract: candidate splits are scanned in ascending feature
//! order, then ascending threshold/category order, and a candidate replaces
//! the incumbent only when strictly better — so equal-quality ties resolve
//! toward the first candidate and the same inputs always grow the same tree.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{Row, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum SplitTest {
    /// Numeric: rows with `value <= threshold` go left. Thresholds sit at
    /// midpoints between consecutive observed values.
    Threshold(f64),
    /// Categorical one-vs-rest: rows equal to the category go left.
    Category(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<L> {
    Split { feature: usize, test: SplitTest, left: usize, right: usize },
    Leaf(L),
}

/// Arena-allocated binary tree; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn route(&self, row: &Row) -> &L {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(leaf) => return leaf,
                Node::Split { feature, test, left, right } => {
                    at = if goes_left(&row[*feature], test) { *left } else { *right };
                }
            }
        }
    }

    pub fn map_leaves<M>(self, mut f: impl FnMut(L) -> M) -> Tree<M> {
        Tree {
            nodes: self
                .nodes
                .into_iter()
                .map(|n| match n {
                    Node::Split { feature, test, left, right } => Node::Split { feature, test, left, right },
                    Node::Leaf(l) => Node::Leaf(f(l)),
                })
                .collect(),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &L> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }
}

pub fn goes_left(value: &Value, test: &SplitTest) -> bool {
    match (value, test) {
        (Value::Num(x), SplitTest::Threshold(t)) => x <= t,
        (Value::Cat(v), SplitTest::Category(c)) => v == c,
        // Kinds are validated at dataset construction; mismatches cannot
        // occur on rows that share the training schema.
        _ => false,
    }
}

#[derive(Debug, Clone)]
pub enum GrowTarget<'a> {
    /// Class index per row plus the class count; impurity is Gini.
    Classes { labels: &'a [usize], num_classes: usize },
    /// Real target per row; impurity is variance.
    Reals(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; clamped to the number of candidates.
    pub features_per_split: usize,
}

/// Grows a CART tree on `include` (row indices into `rows`, duplicates
/// allowed for bootstrap samples). Leaves carry their row-index lists so
/// callers can derive class counts, means or gradients from them.
pub fn grow(
    rows: &[Row],
    feature_columns: &[usize],
    include: &[usize],
    target: &GrowTarget<'_>,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree<Vec<usize>> {
    debug_assert!(params.min_leaf >= 1);
    let mut tree = Tree { nodes: Vec::new() };
    let include = include.to_vec();
    build(&mut tree, rows, feature_columns, include, target, params, rng, 0);
    tree
}

#[allow(clippy::too_many_arguments)]
fn build(
    tree: &mut Tree<Vec<usize>>,
    rows: &[Row],
    feature_columns: &[usize],
    include: Vec<usize>,
    target: &GrowTarget<'_>,
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    depth: usize,
) -> usize {
    let parent_score = impurity_sum(&include, target);
    let splittable = depth < params.max_depth
        && include.len() >= 2 * params.min_leaf
        && parent_score > 0.0;
    let best = if splittable {
        best_split(rows, feature_columns, &include, target, params, parent_score, rng)
    } else {
        None
    };
    match best {
        None => {
            tree.nodes.push(Node::Leaf(include));
            tree.nodes.len() - 1
        }
        Some((feature, test)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                include.iter().partition(|&&i| goes_left(&rows[i][feature], &test));
            let id = tree.nodes.len();
            tree.nodes.push(Node::Split { feature, test, left: 0, right: 0 });
            let left = build(tree, rows, feature_columns, left_rows, target, params, rng, depth + 1);
            let right = build(tree, rows, feature_columns, right_rows, target, params, rng, depth + 1);
            if let Node::Split { left: l, right: r, .. } = &mut tree.nodes[id] {
                *l = left;
                *r = right;
            }
            id
        }
    }
}

/// Size-weighted impurity of one node: `n * gini` or the sum of squared
/// deviations. Comparing sums avoids dividing by the parent size.
fn impurity_sum(include: &[usize], target: &GrowTarget<'_>) -> f64 {
    match target {
        GrowTarget::Classes { labels, num_classes } => {
            let mut counts = vec![0usize; *num_classes];
            for &i in include {
                counts[labels[i]] += 1;
            }
            gini_sum(&counts, include.len())
        }
        GrowTarget::Reals(ys) => {
            let n = include.len() as f64;
            let sum: f64 = include.iter().map(|&i| ys[i]).sum();
            let sum_sq: f64 = include.iter().map(|&i| ys[i] * ys[i]).sum();
            (sum_sq - sum * sum / n).max(0.0)
        }
    }
}

fn gini_sum(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    nf - sq / nf
}

fn best_split(
    rows: &[Row],
    feature_columns: &[usize],
    include: &[usize],
    target: &GrowTarget<'_>,
    params: &GrowParams,
    parent_score: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, SplitTest)> {
    let mut candidates: Vec<usize> = feature_columns.to_vec();
    if params.features_per_split > 0 && params.features_per_split < candidates.len() {
        candidates.shuffle(rng);
        candidates.truncate(params.features_per_split);
        // Ascending column order keeps tie-breaks independent of draw order.
        candidates.sort_unstable();
    }
    let mut best: Option<(f64, usize, SplitTest)> = None;
    for &feature in &candidates {
        match &rows[include[0]][feature] {
            Value::Num(_) => {
                numeric_splits(rows, feature, include, target, params, &mut best);
            }
            Value::Cat(_) => {
                categorical_splits(rows, feature, include, target, params, &mut best);
            }
        }
    }
    best.filter(|(score, ..)| *score < parent_score).map(|(_, f, t)| (f, t))
}

/// Accumulating side statistics, generic over both impurity kinds.
enum SideStats {
    Classes { counts: Vec<usize>, n: usize },
    Reals { sum: f64, sum_sq: f64, n: usize },
}

impl SideStats {
    fn empty(target: &GrowTarget<'_>) -> Self {
        match target {
            GrowTarget::Classes { num_classes, .. } => SideStats::Classes { counts: vec![0; *num_classes], n: 0 },
            GrowTarget::Reals(_) => SideStats::Reals { sum: 0.0, sum_sq: 0.0, n: 0 },
        }
    }

    fn add(&mut self, row: usize, target: &GrowTarget<'_>) {
        match (self, target) {
            (SideStats::Classes { counts, n }, GrowTarget::Classes { labels, .. }) => {
                counts[labels[row]] += 1;
                *n += 1;
            }
            (SideStats::Reals { sum, sum_sq, n }, GrowTarget::Reals(ys)) => {
                *sum += ys[row];
                *sum_sq += ys[row] * ys[row];
                *n += 1;
            }
            _ => unreachable!("target kind fixed per grow call"),
        }
    }

    fn remove(&mut self, row: usize, target: &GrowTarget<'_>) {
        match (self, target) {
            (SideStats::Classes { counts, n }, GrowTarget::Classes { labels, .. }) => {
                counts[labels[row]] -= 1;
                *n -= 1;
            }
            (SideStats::Reals { sum, sum_sq, n }, GrowTarget::Reals(ys)) => {
                *sum -= ys[row];
                *sum_sq -= ys[row] * ys[row];
                *n -= 1;
            }
            _ => unreachable!("target kind fixed per grow call"),
        }
    }

    fn len(&self) -> usize {
        match self {
            SideStats::Classes { n, .. } | SideStats::Reals { n, .. } => *n,
        }
    }

    fn score(&self) -> f64 {
        match self {
            SideStats::Classes { counts, n } => gini_sum(counts, *n),
            SideStats::Reals { sum, sum_sq, n } => {
                if *n == 0 {
                    0.0
                } else {
                    (sum_sq - sum * sum / *n as f64).max(0.0)
                }
            }
        }
    }
}

fn consider(
    score: f64,
    feature: usize,
    test: SplitTest,
    best: &mut Option<(f64, usize, SplitTest)>,
) {
    // Strict `<`: scan order (feature asc, then threshold/category asc)
    // decides ties.
    if best.as_ref().is_none_or(|(s, ..)| score < *s) {
        *best = Some((score, feature, test));
    }
}

fn numeric_splits(
    rows: &[Row],
    feature: usize,
    include: &[usize],
    target: &GrowTarget<'_>,
    params: &GrowParams,
    best: &mut Option<(f64, usize, SplitTest)>,
) {
    let mut order: Vec<usize> = include.to_vec();
    order.sort_by(|&a, &b| {
        let (x, y) = (rows[a][feature].as_num().unwrap(), rows[b][feature].as_num().unwrap());
        x.partial_cmp(&y).expect("finite values")
    });
    let mut left = SideStats::empty(target);
    let mut right = SideStats::empty(target);
    for &i in &order {
        right.add(i, target);
    }
    for w in 0..order.len().saturating_sub(1) {
        let i = order[w];
        left.add(i, target);
        right.remove(i, target);
        let here = rows[i][feature].as_num().unwrap();
        let next = rows[order[w + 1]][feature].as_num().unwrap();
        if here == next {
            continue;
        }
        if left.len() < params.min_leaf || right.len() < params.min_leaf {
            continue;
        }
        let threshold = here + (next - here) / 2.0;
        consider(left.score() + right.score(), feature, SplitTest::Threshold(threshold), best);
    }
}

fn categorical_splits(
    rows: &[Row],
    feature: usize,
    include: &[usize],
    target: &GrowTarget<'_>,
    params: &GrowParams,
    best: &mut Option<(f64, usize, SplitTest)>,
) {
    let values: BTreeSet<&str> = include
        .iter()
        .map(|&i| match &rows[i][feature] {
            Value::Cat(v) => v.as_str(),
            Value::Num(_) => unreachable!("column kind fixed per dataset"),
        })
        .collect();
    if values.len() < 2 {
        return;
    }
    for v in values {
        let mut left = SideStats::empty(target);
        let mut right = SideStats::empty(target);
        for &i in include {
            match &rows[i][feature] {
                Value::Cat(c) if c == v => left.add(i, target),
                _ => right.add(i, target),
            }
        }
        if left.len() < params.min_leaf || right.len() < params.min_leaf {
            continue;
        }
        consider(left.score() + right.score(), feature, SplitTest::Category(String::from(v)), best);
    }
}
