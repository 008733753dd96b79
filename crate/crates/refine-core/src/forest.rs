//! Small random forests and the path machinery that turns them into rule
//! material: per-tree accuracy ranking, root-to-leaf path extraction with
//! canonicalized predicates, and quantile binning of regression targets
//! into rule intervals.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ColumnKind, DataError, Dataset, Row, Schema, Task, Value};
use crate::seed;
use crate::tree::{self, GrowParams, GrowTarget, Node, SplitTest, Tree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("cannot train on an empty dataset")]
    Empty,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid forest parameter: {0}")]
    BadParams(&'static str),
    #[error("k = {k} outside 1..={trees} trees")]
    KInvalid { k: usize, trees: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features drawn per split; 0 means all features.
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { num_trees: 20, max_depth: 4, min_leaf: 2, features_per_split: 0, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafOutcome {
    /// Class counts over the forest's class list.
    Counts(Vec<usize>),
    /// Mean target of the leaf's training rows.
    Mean(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestLeaf {
    pub outcome: LeafOutcome,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub schema: Schema,
    /// Sorted distinct training labels (classification only).
    pub classes: Vec<String>,
    pub trees: Vec<Tree<ForestLeaf>>,
    pub params: ForestParams,
}

/// Trains a bagged CART forest. Each tree reseeds its own ChaCha stream
/// from `(seed, tree index)`, so any prefix of the ensemble is stable under
/// a change of `num_trees`.
pub fn train_forest(train: &Dataset, params: &ForestParams) -> Result<Forest, ForestError> {
    if train.is_empty() {
        return Err(ForestError::Empty);
    }
    if params.num_trees == 0 {
        return Err(ForestError::BadParams("num_trees must be at least 1"));
    }
    if params.max_depth == 0 {
        return Err(ForestError::BadParams("max_depth must be at least 1"));
    }
    if params.min_leaf == 0 {
        return Err(ForestError::BadParams("min_leaf must be at least 1"));
    }
    let classes = train.class_labels();
    let class_index: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let reals;
    let labels;
    let target = match train.schema.task {
        Task::Classification { .. } => {
            if classes.len() < 2 {
                return Err(ForestError::SingleClass);
            }
            labels = train
                .labels()
                .iter()
                .map(|l| class_index[l.as_str()])
                .collect::<Vec<_>>();
            GrowTarget::Classes { labels: &labels, num_classes: classes.len() }
        }
        Task::Regression => {
            reals = train.numeric_targets()?;
            GrowTarget::Reals(&reals)
        }
    };
    let feature_columns = train.schema.feature_indices();
    let grow_params = GrowParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features_per_split: params.features_per_split,
    };
    let n = train.len();
    let trees = (0..params.num_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(params.seed, t as u64));
            let include: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            tree::grow(&train.rows, &feature_columns, &include, &target, &grow_params, &mut rng).map_leaves(|rows| {
                let outcome = match &target {
                    GrowTarget::Classes { labels, num_classes } => {
                        let mut counts = vec![0usize; *num_classes];
                        for &i in &rows {
                            counts[labels[i]] += 1;
                        }
                        LeafOutcome::Counts(counts)
                    }
                    GrowTarget::Reals(ys) => {
                        let sum: f64 = rows.iter().map(|&i| ys[i]).sum();
                        LeafOutcome::Mean(sum / rows.len() as f64)
                    }
                };
                ForestLeaf { outcome, support: rows.len() }
            })
        })
        .collect();
    Ok(Forest { schema: train.schema.clone(), classes, trees, params: params.clone() })
}

fn argmax_counts(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

impl Forest {
    /// Single-tree prediction as canonical label text (classification) or
    /// numeric text (regression). Count ties go to the lowest class index.
    pub fn tree_predicted_label(&self, tree: usize, row: &Row) -> String {
        let leaf = self.trees[tree].route(row);
        match &leaf.outcome {
            LeafOutcome::Counts(counts) => self.classes[argmax_counts(counts)].clone(),
            LeafOutcome::Mean(v) => Value::Num(*v).render(),
        }
    }

    pub fn tree_predicted_value(&self, tree: usize, row: &Row) -> f64 {
        match &self.trees[tree].route(row).outcome {
            LeafOutcome::Mean(v) => *v,
            LeafOutcome::Counts(_) => panic!("numeric prediction on a classification forest"),
        }
    }
}

/// Standalone score of one tree on `data`: accuracy for classification,
/// negated RMSE for regression (so higher is always better).
pub fn tree_accuracy(forest: &Forest, tree: usize, data: &Dataset) -> Result<f64, ForestError> {
    if data.is_empty() {
        return Err(ForestError::Empty);
    }
    let n = data.len() as f64;
    match forest.schema.task {
        Task::Classification { .. } => {
            let labels = data.labels();
            let hits = data
                .rows
                .iter()
                .zip(&labels)
                .filter(|(row, label)| &forest.tree_predicted_label(tree, row) == *label)
                .count();
            Ok(hits as f64 / n)
        }
        Task::Regression => {
            let ys = data.numeric_targets()?;
            let sse: f64 = data
                .rows
                .iter()
                .zip(&ys)
                .map(|(row, y)| {
                    let d = forest.tree_predicted_value(tree, row) - y;
                    d * d
                })
                .sum();
            Ok(-num_traits::Float::sqrt(sse / n))
        }
    }
}

/// Indices of the k highest scores, descending; equal scores keep the
/// lower index first.
pub fn rank_by_score(scores: &[f64], k: usize) -> Result<Vec<usize>, ForestError> {
    if k == 0 || k > scores.len() {
        return Err(ForestError::KInvalid { k, trees: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Ranks trees by standalone accuracy on `data` and returns the top k.
pub fn select_top_k(forest: &Forest, data: &Dataset, k: usize) -> Result<Vec<usize>, ForestError> {
    let scores = (0..forest.trees.len())
        .map(|t| tree_accuracy(forest, t, data))
        .collect::<Result<Vec<f64>, _>>()?;
    rank_by_score(&scores, k)
}

/// Predicate operators a tree path can carry. `NotEq` arises only on the
/// rest-branch of a categorical split; rule conditions never keep it, but
/// paths need it so that exactly one path matches any row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PathOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    NotEq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPredicate {
    pub feature: String,
    pub op: PathOp,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathOutcome {
    Class(String),
    Value(f64),
}

/// One root-to-leaf path: a satisfiable conjunction with the leaf's
/// prediction and support.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPath {
    pub predicates: Vec<PathPredicate>,
    pub outcome: PathOutcome,
    pub support: usize,
}

pub fn path_matches(path: &RawPath, row: &Row, schema: &Schema) -> bool {
    path.predicates.iter().all(|p| {
        let Some(col) = schema.column_index(&p.feature) else {
            return false;
        };
        match (&row[col], &p.value) {
            (Value::Num(x), Value::Num(v)) => match p.op {
                PathOp::Lt => x < v,
                PathOp::Le => x <= v,
                PathOp::Gt => x > v,
                PathOp::Ge => x >= v,
                PathOp::Eq => x == v,
                PathOp::NotEq => x != v,
            },
            (Value::Cat(x), Value::Cat(v)) => match p.op {
                PathOp::Eq => x == v,
                PathOp::NotEq => x != v,
                _ => false,
            },
            _ => false,
        }
    })
}

/// Extracts every root-to-leaf path of one tree, canonicalizing repeated
/// tests on a feature into at most one lower bound, one upper bound, one
/// equality and a sorted set of exclusions.
pub fn extract_paths(forest: &Forest, tree: usize) -> Vec<RawPath> {
    let t = &forest.trees[tree];
    let mut out = Vec::new();
    // (node, predicates along the way): left branch first for stable order.
    let mut stack = vec![(0usize, Vec::<(usize, PathOp, Value)>::new())];
    while let Some((at, preds)) = stack.pop() {
        match &t.nodes[at] {
            Node::Split { feature, test, left, right } => {
                let (l, r) = match test {
                    SplitTest::Threshold(v) => ((PathOp::Le, Value::Num(*v)), (PathOp::Gt, Value::Num(*v))),
                    SplitTest::Category(c) => {
                        ((PathOp::Eq, Value::Cat(c.clone())), (PathOp::NotEq, Value::Cat(c.clone())))
                    }
                };
                let mut lp = preds.clone();
                lp.push((*feature, l.0, l.1));
                let mut rp = preds;
                rp.push((*feature, r.0, r.1));
                // Pushed right first so the left subtree is emitted first.
                stack.push((*right, rp));
                stack.push((*left, lp));
            }
            Node::Leaf(leaf) => {
                let outcome = match &leaf.outcome {
                    LeafOutcome::Counts(c) => PathOutcome::Class(forest.classes[argmax_counts(c)].clone()),
                    LeafOutcome::Mean(v) => PathOutcome::Value(*v),
                };
                out.push(RawPath {
                    predicates: canonicalize(&preds, &forest.schema),
                    outcome,
                    support: leaf.support,
                });
            }
        }
    }
    out
}

fn canonicalize(preds: &[(usize, PathOp, Value)], schema: &Schema) -> Vec<PathPredicate> {
    let mut out = Vec::new();
    for (col, def) in schema.columns.iter().enumerate() {
        match def.kind {
            ColumnKind::Numeric => {
                let mut lower: Option<f64> = None;
                let mut upper: Option<f64> = None;
                for (c, op, v) in preds {
                    if *c != col {
                        continue;
                    }
                    let x = v.as_num().expect("numeric test on numeric column");
                    match op {
                        PathOp::Gt => lower = Some(lower.map_or(x, |l| l.max(x))),
                        PathOp::Le => upper = Some(upper.map_or(x, |u| u.min(x))),
                        _ => unreachable!("numeric splits emit Le/Gt only"),
                    }
                }
                if let (Some(l), Some(u)) = (lower, upper) {
                    debug_assert!(l < u, "nested thresholds keep paths satisfiable");
                }
                if let Some(l) = lower {
                    out.push(PathPredicate { feature: def.name.clone(), op: PathOp::Gt, value: Value::Num(l) });
                }
                if let Some(u) = upper {
                    out.push(PathPredicate { feature: def.name.clone(), op: PathOp::Le, value: Value::Num(u) });
                }
            }
            ColumnKind::Categorical => {
                let mut eq: Option<&str> = None;
                let mut neq: Vec<&str> = Vec::new();
                for (c, op, v) in preds {
                    if *c != col {
                        continue;
                    }
                    let s = match v {
                        Value::Cat(s) => s.as_str(),
                        Value::Num(_) => unreachable!("categorical test on categorical column"),
                    };
                    match op {
                        PathOp::Eq => eq = Some(s),
                        PathOp::NotEq => neq.push(s),
                        _ => unreachable!("categorical splits emit Eq/NotEq only"),
                    }
                }
                if let Some(v) = eq {
                    out.push(PathPredicate {
                        feature: def.name.clone(),
                        op: PathOp::Eq,
                        value: Value::Cat(String::from(v)),
                    });
                } else {
                    neq.sort_unstable();
                    neq.dedup();
                    for v in neq {
                        out.push(PathPredicate {
                            feature: def.name.clone(),
                            op: PathOp::NotEq,
                            value: Value::Cat(String::from(v)),
                        });
                    }
                }
            }
        }
    }
    out
}

/// Bins regression labels into rule intervals: one interval per distinct
/// label when there are at most `num_intervals` of them, otherwise
/// quantile cuts, each snapped to the nearest of `snap` (top-tree leaf
/// values) when that moves it by at most one bin width. Returned intervals
/// are contiguous and cover the observed label range.
pub fn bin_regression_targets(
    train: &Dataset,
    num_intervals: usize,
    snap: &[f64],
) -> Result<Vec<(f64, f64)>, ForestError> {
    if num_intervals == 0 {
        return Err(ForestError::BadParams("num_intervals must be at least 1"));
    }
    if train.is_empty() {
        return Err(ForestError::Empty);
    }
    let mut ys = train.numeric_targets()?;
    ys.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
    let mut distinct = ys.clone();
    distinct.dedup();
    let (min, max) = (ys[0], ys[ys.len() - 1]);

    let cuts: Vec<f64> = if distinct.len() <= num_intervals {
        distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
    } else {
        let width = (max - min) / num_intervals as f64;
        let mut cuts: Vec<f64> = (1..num_intervals)
            .map(|j| {
                let h = (ys.len() - 1) as f64 * j as f64 / num_intervals as f64;
                let lo = h as usize;
                let frac = h - lo as f64;
                let cut = ys[lo] + frac * (ys[(lo + 1).min(ys.len() - 1)] - ys[lo]);
                snap_cut(cut, snap, width)
            })
            .filter(|&c| c > min && c < max)
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cuts"));
        cuts.dedup();
        cuts
    };

    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(min);
    bounds.extend(cuts);
    bounds.push(max);
    Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
}

fn snap_cut(cut: f64, snap: &[f64], width: f64) -> f64 {
    let mut best = cut;
    let mut dist = width;
    for &s in snap {
        let d = (s - cut).abs();
        if d <= dist && (d < dist || s < best) {
            best = s;
            dist = d;
        }
    }
    best
}

/// Index of the interval containing `y`; values outside the covered range
/// clamp to the first or last interval.
pub fn interval_index(bins: &[(f64, f64)], y: f64) -> usize {
    for (i, (_, hi)) in bins.iter().enumerate() {
        if y <= *hi {
            return i;
        }
    }
    bins.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{column_stats, ColumnDef, InferOptions, Provenance};
    use alloc::format;
    use alloc::string::ToString;
    use proptest::prelude::*;

    fn csv_dataset(text: &str) -> Dataset {
        Dataset::from_csv(text, None, &InferOptions::default(), Provenance::Real).unwrap()
    }

    fn no_bootstrap(trees: usize, depth: usize) -> ForestParams {
        ForestParams { num_trees: trees, max_depth: depth, min_leaf: 1, bootstrap: false, ..ForestParams::default() }
    }

    #[test]
    fn separable_data_yields_midpoint_stump() {
        let ds = csv_dataset("x,y\n1,0\n2,0\n3,1\n4,1\n");
        let forest = train_forest(&ds, &no_bootstrap(1, 1)).unwrap();
        match &forest.trees[0].nodes[0] {
            Node::Split { test: SplitTest::Threshold(t), .. } => assert_eq!(*t, 2.5),
            other => panic!("expected stump, got {other:?}"),
        }
        assert_eq!(tree_accuracy(&forest, 0, &ds).unwrap(), 1.0);
    }

    #[test]
    fn single_class_training_is_rejected() {
        // Two-class schema, but the training slice happens to hold one class.
        let schema = csv_dataset("x,y\n1,0\n2,1\n").schema;
        let ds = Dataset::from_csv("x,y\n1,1\n2,1\n3,1\n", Some(schema), &InferOptions::default(), Provenance::Real)
            .unwrap();
        assert_eq!(train_forest(&ds, &ForestParams::default()).unwrap_err(), ForestError::SingleClass);
    }

    #[test]
    fn constant_regression_grows_single_leaves() {
        let ds = csv_dataset("x,y\n1,3.5\n2,3.5\n3,3.5\n");
        let forest = train_forest(&ds, &no_bootstrap(2, 4)).unwrap();
        for t in &forest.trees {
            assert_eq!(t.nodes.len(), 1);
        }
        assert_eq!(forest.tree_predicted_value(0, &ds.rows[0]), 3.5);
    }

    #[test]
    fn same_seed_reproduces_the_forest() {
        let mut text = String::from("a,b,y\n");
        for i in 0..30 {
            text.push_str(&format!("{},{},{}\n", i, (i * 7) % 13, i % 2));
        }
        let ds = csv_dataset(&text);
        let params = ForestParams { seed: 9, features_per_split: 1, ..ForestParams::default() };
        let f1 = train_forest(&ds, &params).unwrap();
        let f2 = train_forest(&ds, &params).unwrap();
        assert_eq!(f1, f2);
        let f3 = train_forest(&ds, &ForestParams { seed: 10, ..params }).unwrap();
        assert_ne!(f1, f3, "reseeding should change bootstrap draws");
    }

    #[test]
    fn leaf_supports_sum_to_sample_size() {
        let mut text = String::from("a,y\n");
        for i in 0..20 {
            text.push_str(&format!("{},{}\n", i as f64 * 0.7, i % 2));
        }
        let ds = csv_dataset(&text);
        let forest = train_forest(&ds, &ForestParams { min_leaf: 2, ..ForestParams::default() }).unwrap();
        for t in &forest.trees {
            let total: usize = t.leaves().map(|l| l.support).sum();
            assert_eq!(total, ds.len());
            for l in t.leaves() {
                assert!(l.support >= 2, "min_leaf bounds every split");
            }
        }
    }

    #[test]
    fn hand_built_accuracy_oracle() {
        // Seven of ten rows are class "0"; a constant-0 leaf scores 0.7.
        let mut text = String::from("x,y\n");
        for i in 0..10 {
            text.push_str(&format!("{},{}\n", i, usize::from(i >= 7)));
        }
        let ds = csv_dataset(&text);
        let forest = Forest {
            schema: ds.schema.clone(),
            classes: ds.class_labels(),
            trees: vec![Tree { nodes: vec![Node::Leaf(ForestLeaf { outcome: LeafOutcome::Counts(vec![7, 3]), support: 10 })] }],
            params: ForestParams::default(),
        };
        assert_eq!(tree_accuracy(&forest, 0, &ds).unwrap(), 0.7);
    }

    #[test]
    fn regression_accuracy_is_negated_rmse() {
        let mut ds = csv_dataset("x,y\n1,0.0\n2,2.0\n");
        ds.schema.task = Task::Regression;
        let forest = Forest {
            schema: ds.schema.clone(),
            classes: vec![],
            trees: vec![Tree { nodes: vec![Node::Leaf(ForestLeaf { outcome: LeafOutcome::Mean(1.0), support: 2 })] }],
            params: ForestParams::default(),
        };
        assert_eq!(tree_accuracy(&forest, 0, &ds).unwrap(), -1.0);
    }

    #[test]
    fn ranking_breaks_ties_toward_lower_index() {
        assert_eq!(rank_by_score(&[0.9, 0.7, 0.9, 0.5], 2).unwrap(), vec![0, 2]);
        assert_eq!(rank_by_score(&[0.9, 0.7, 0.9, 0.5], 3).unwrap(), vec![0, 2, 1]);
        assert_eq!(rank_by_score(&[0.5], 1).unwrap(), vec![0]);
        assert!(matches!(rank_by_score(&[0.5, 0.6], 3), Err(ForestError::KInvalid { k: 3, trees: 2 })));
        assert!(matches!(rank_by_score(&[0.5], 0), Err(ForestError::KInvalid { k: 0, .. })));
    }

    #[test]
    fn stump_paths_cover_both_sides() {
        let ds = csv_dataset("x,y\n1,0\n2,0\n3,1\n4,1\n");
        let forest = train_forest(&ds, &no_bootstrap(1, 1)).unwrap();
        let paths = extract_paths(&forest, 0);
        assert_eq!(paths.len(), 2);
        assert_eq!(
            paths[0].predicates,
            vec![PathPredicate { feature: "x".to_string(), op: PathOp::Le, value: Value::Num(2.5) }]
        );
        assert_eq!(paths[0].outcome, PathOutcome::Class("0".to_string()));
        assert_eq!(paths[0].support, 2);
        assert_eq!(paths[1].predicates[0].op, PathOp::Gt);
        assert_eq!(paths[1].outcome, PathOutcome::Class("1".to_string()));
    }

    #[test]
    fn nested_thresholds_canonicalize() {
        // Hand-built: x <= 7 then x <= 5 on the left.
        let leaf = |class: usize, support| {
            Node::Leaf(ForestLeaf {
                outcome: LeafOutcome::Counts(if class == 0 { vec![support, 0] } else { vec![0, support] }),
                support,
            })
        };
        let tree = Tree {
            nodes: vec![
                Node::Split { feature: 0, test: SplitTest::Threshold(7.0), left: 1, right: 4 },
                Node::Split { feature: 0, test: SplitTest::Threshold(5.0), left: 2, right: 3 },
                leaf(0, 3),
                leaf(1, 2),
                leaf(1, 4),
            ],
        };
        let ds = csv_dataset("x,y\n1,0\n8,1\n");
        let forest =
            Forest { schema: ds.schema.clone(), classes: ds.class_labels(), trees: vec![tree], params: ForestParams::default() };
        let paths = extract_paths(&forest, 0);
        assert_eq!(paths.len(), 3);
        // Left-left: the tighter upper bound only.
        assert_eq!(
            paths[0].predicates,
            vec![PathPredicate { feature: "x".to_string(), op: PathOp::Le, value: Value::Num(5.0) }]
        );
        // Left-right: both sides of the sandwich.
        assert_eq!(
            paths[1].predicates,
            vec![
                PathPredicate { feature: "x".to_string(), op: PathOp::Gt, value: Value::Num(5.0) },
                PathPredicate { feature: "x".to_string(), op: PathOp::Le, value: Value::Num(7.0) },
            ]
        );
        assert_eq!(paths[2].predicates[0].op, PathOp::Gt);
        assert_eq!(paths[2].support, 4);
    }

    #[test]
    fn categorical_rest_branch_keeps_exclusions() {
        let mut text = String::from("c,y\n");
        for (v, y) in [("a", 0), ("a", 0), ("b", 1), ("b", 1), ("c", 0), ("c", 0)] {
            text.push_str(&format!("{v},{y}\n"));
        }
        let ds = csv_dataset(&text);
        let forest = train_forest(&ds, &no_bootstrap(1, 3)).unwrap();
        let paths = extract_paths(&forest, 0);
        for p in &paths {
            for row in &ds.rows {
                let matched = path_matches(p, row, &ds.schema);
                let routed = forest.tree_predicted_label(0, row);
                if matched {
                    assert_eq!(PathOutcome::Class(routed), p.outcome);
                }
            }
        }
        // Exactly one path matches each row.
        for row in &ds.rows {
            let hits = paths.iter().filter(|p| path_matches(p, row, &ds.schema)).count();
            assert_eq!(hits, 1);
        }
    }

    proptest! {
        /// Exactly one extracted path matches any row, and its outcome is
        /// the tree's prediction.
        #[test]
        fn path_completeness(
            xs in proptest::collection::vec(-50i16..50, 8..40),
            cats in proptest::collection::vec(0u8..3, 8..40),
            seed in 0u64..500,
        ) {
            let n = xs.len().min(cats.len());
            let mut text = String::from("x,c,y\n");
            for i in 0..n {
                let label = (xs[i] > 0) as u8 ^ (cats[i] == 1) as u8;
                text.push_str(&format!("{},k{},{}\n", xs[i], cats[i], label));
            }
            // Constant labels fail schema inference; skip those draws.
            let Ok(ds) = Dataset::from_csv(&text, None, &InferOptions::default(), Provenance::Real) else {
                return Ok(());
            };
            let params = ForestParams { num_trees: 3, seed, ..ForestParams::default() };
            let forest = train_forest(&ds, &params).unwrap();
            for t in 0..forest.trees.len() {
                let paths = extract_paths(&forest, t);
                for row in &ds.rows {
                    let matching: Vec<&RawPath> =
                        paths.iter().filter(|p| path_matches(p, row, &ds.schema)).collect();
                    prop_assert_eq!(matching.len(), 1);
                    let predicted = forest.tree_predicted_label(t, row);
                    prop_assert_eq!(&matching[0].outcome, &PathOutcome::Class(predicted));
                }
            }
        }
    }

    #[test]
    fn select_top_k_uses_training_accuracy() {
        let mut text = String::from("a,b,y\n");
        for i in 0..24 {
            text.push_str(&format!("{},{},{}\n", i, (i * 5) % 7, u8::from(i >= 12)));
        }
        let ds = csv_dataset(&text);
        let forest = train_forest(&ds, &ForestParams { num_trees: 10, seed: 3, ..ForestParams::default() }).unwrap();
        let top = select_top_k(&forest, &ds, 3).unwrap();
        assert_eq!(top.len(), 3);
        let scores: Vec<f64> = (0..10).map(|t| tree_accuracy(&forest, t, &ds).unwrap()).collect();
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(scores[top[0]], best);
        assert!(scores[top[0]] >= scores[top[1]] && scores[top[1]] >= scores[top[2]]);
        assert!(matches!(select_top_k(&forest, &ds, 11), Err(ForestError::KInvalid { .. })));
    }

    fn regression_dataset(ys: &[f64]) -> Dataset {
        let mut text = String::from("x,y\n");
        for (i, y) in ys.iter().enumerate() {
            text.push_str(&format!("{i},{y}\n"));
        }
        let mut ds = csv_dataset(&text);
        ds.schema.task = Task::Regression;
        ds
    }

    #[test]
    fn binning_uniform_labels_cuts_at_median() {
        let ys: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let bins = bin_regression_targets(&regression_dataset(&ys), 2, &[]).unwrap();
        assert_eq!(bins, vec![(0.0, 50.0), (50.0, 100.0)]);
    }

    #[test]
    fn binning_constant_labels_single_interval() {
        let bins = bin_regression_targets(&regression_dataset(&[4.2, 4.2, 4.2]), 3, &[]).unwrap();
        assert_eq!(bins, vec![(4.2, 4.2)]);
    }

    #[test]
    fn binning_few_distinct_labels_collapses() {
        let bins = bin_regression_targets(&regression_dataset(&[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]), 5, &[]).unwrap();
        assert_eq!(bins, vec![(1.0, 1.5), (1.5, 2.5), (2.5, 3.0)]);
    }

    #[test]
    fn binning_snaps_within_one_bin_width() {
        let ys: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let ds = regression_dataset(&ys);
        let snapped = bin_regression_targets(&ds, 2, &[47.0]).unwrap();
        assert_eq!(snapped[0].1, 47.0);
        let far = bin_regression_targets(&ds, 2, &[140.0]).unwrap();
        assert_eq!(far[0].1, 50.0, "snap farther than one bin width is ignored");
    }

    #[test]
    fn binning_intervals_are_contiguous() {
        let ys: Vec<f64> = (0..50).map(|i| (i as f64 * 1.7) % 23.0).collect();
        let bins = bin_regression_targets(&regression_dataset(&ys), 3, &[]).unwrap();
        for w in bins.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        let (min, max) = (bins[0].0, bins[bins.len() - 1].1);
        assert!(ys.iter().all(|&y| y >= min && y <= max));
        assert_eq!(interval_index(&bins, min), 0);
        assert_eq!(interval_index(&bins, max + 10.0), bins.len() - 1);
    }

    #[test]
    fn feature_subsetting_still_deterministic() {
        let mut text = String::from("a,b,c,y\n");
        for i in 0..40 {
            text.push_str(&format!("{},{},{},{}\n", i, (i * 3) % 11, (i * 5) % 17, i % 2));
        }
        let ds = csv_dataset(&text);
        let schema_cols = ds.schema.columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
        assert_eq!(schema_cols, ["a", "b", "c", "y"]);
        let params = ForestParams { features_per_split: 2, seed: 5, ..ForestParams::default() };
        assert_eq!(train_forest(&ds, &params).unwrap(), train_forest(&ds, &params).unwrap());
    }

    #[test]
    fn stats_vocabulary_helper_sees_categoricals() {
        let ds = csv_dataset("c,y\nred,0\nblue,1\nred,0\nblue,1\n");
        let stats = column_stats(&ds).unwrap();
        assert_eq!(stats.vocabulary(0).unwrap().len(), 2);
        assert!(ColumnDef::categorical("c").description.is_none());
    }
}
