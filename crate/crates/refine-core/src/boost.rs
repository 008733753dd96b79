//! Staged gradient-boosted reference model.
//!
//! A small GBDT whose whole point is its training *trajectory*: the filter
//! scores every synthetic row by how the model's opinion of it evolves
//! across boosting rounds, so the per-round state is first-class here, not
//! an implementation detail. Classification boosts one tree per class per
//! round on softmax gradients with Newton leaf steps; regression boosts on
//! residuals from the mean.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataError, Dataset, Row, Schema, Task, Value};
use crate::seed;
use crate::tree::{grow, GrowParams, GrowTarget, Tree};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BoostError {
    #[error("cannot boost on an empty dataset")]
    Empty,
    #[error("classification boosting needs at least two observed classes")]
    SingleClass,
    #[error("dataset task does not match the model's task")]
    TaskMismatch,
    #[error("invalid boost parameters: {0}")]
    BadParams(&'static str),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { rounds: 50, learning_rate: 0.1, max_depth: 3, min_leaf: 1, seed: 0 }
    }
}

// Newton steps on near-pure leaves divide by a vanishing hessian; the
// floor and clamp keep single leaves from saturating the log-odds.
const HESSIAN_FLOOR: f64 = 1e-6;
const LEAF_CLAMP: f64 = 8.0;
/// Probability floor used by [`Booster::surprisal`]; one row contributes
/// at most `-ln(1e-12)` ≈ 27.63 nats.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Model {
    /// `trees[round][class]`, scores start at zero.
    Classification { classes: Vec<String>, trees: Vec<Vec<Tree<f64>>> },
    /// `trees[round]`, predictions start at the training mean.
    Regression { base: f64, trees: Vec<Tree<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    pub schema: Schema,
    pub params: BoostParams,
    model: Model,
}

pub fn train_boost(train: &Dataset, params: &BoostParams) -> Result<Booster, BoostError> {
    if train.is_empty() {
        return Err(BoostError::Empty);
    }
    if params.rounds == 0 {
        return Err(BoostError::BadParams("rounds must be at least 1"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(BoostError::BadParams("learning_rate must be positive and finite"));
    }
    let features = train.schema.feature_indices();
    let include: Vec<usize> = (0..train.len()).collect();
    let grow_params =
        GrowParams { max_depth: params.max_depth, min_leaf: params.min_leaf, features_per_split: 0 };

    let model = match train.schema.task {
        Task::Classification { .. } => {
            let classes = train.class_labels();
            if classes.len() < 2 {
                return Err(BoostError::SingleClass);
            }
            let y: Vec<usize> = train
                .labels()
                .iter()
                .map(|l| classes.iter().position(|c| c == l).expect("label drawn from class set"))
                .collect();
            let n = train.len();
            let c_count = classes.len();
            let mut scores = vec![vec![0.0f64; c_count]; n];
            let mut trees: Vec<Vec<Tree<f64>>> = Vec::with_capacity(params.rounds);
            for round in 0..params.rounds {
                let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
                let mut round_trees = Vec::with_capacity(c_count);
                for c in 0..c_count {
                    let residual: Vec<f64> =
                        (0..n).map(|i| f64::from(u8::from(y[i] == c)) - probs[i][c]).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(
                        params.seed,
                        (round * c_count + c) as u64,
                    ));
                    let raw = grow(
                        &train.rows,
                        &features,
                        &include,
                        &GrowTarget::Reals(&residual),
                        &grow_params,
                        &mut rng,
                    );
                    let tree = raw.map_leaves(|members| {
                        let num: f64 = members.iter().map(|&i| residual[i]).sum();
                        let den: f64 = members.iter().map(|&i| probs[i][c] * (1.0 - probs[i][c])).sum();
                        (num / den.max(HESSIAN_FLOOR)).clamp(-LEAF_CLAMP, LEAF_CLAMP)
                    });
                    for (i, row) in train.rows.iter().enumerate() {
                        scores[i][c] += params.learning_rate * tree.route(row);
                    }
                    round_trees.push(tree);
                }
                trees.push(round_trees);
            }
            Model::Classification { classes, trees }
        }
        Task::Regression => {
            let y = train.numeric_targets()?;
            let base = y.iter().sum::<f64>() / y.len() as f64;
            let mut current = vec![base; y.len()];
            let mut trees = Vec::with_capacity(params.rounds);
            for round in 0..params.rounds {
                let residual: Vec<f64> = y.iter().zip(&current).map(|(t, f)| t - f).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(params.seed, round as u64));
                let raw = grow(
                    &train.rows,
                    &features,
                    &include,
                    &GrowTarget::Reals(&residual),
                    &grow_params,
                    &mut rng,
                );
                let tree = raw.map_leaves(|members| {
                    members.iter().map(|&i| residual[i]).sum::<f64>() / members.len() as f64
                });
                for (i, row) in train.rows.iter().enumerate() {
                    current[i] += params.learning_rate * tree.route(row);
                }
                trees.push(tree);
            }
            Model::Regression { base, trees }
        }
    };
    Ok(Booster { schema: train.schema.clone(), params: *params, model })
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let top = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| Float::exp(s - top)).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Booster {
    pub fn classes(&self) -> Option<&[String]> {
        match &self.model {
            Model::Classification { classes, .. } => Some(classes),
            Model::Regression { .. } => None,
        }
    }

    fn check(&self, data: &Dataset) -> Result<(), BoostError> {
        let same_kind = matches!(
            (&self.model, &data.schema.task),
            (Model::Classification { .. }, Task::Classification { .. })
                | (Model::Regression { .. }, Task::Regression)
        );
        if same_kind {
            Ok(())
        } else {
            Err(BoostError::TaskMismatch)
        }
    }

    /// Per-row training dynamics: for classification, the probability of
    /// the row's own label after each round (0.0 when the label was never
    /// seen in training); for regression, the prediction after each round.
    pub fn trace(&self, data: &Dataset) -> Result<Vec<Vec<f64>>, BoostError> {
        self.check(data)?;
        let target = data.schema.target_index();
        let lr = self.params.learning_rate;
        let out = match &self.model {
            Model::Classification { classes, trees } => data
                .rows
                .iter()
                .map(|row| {
                    let label = row[target].render();
                    let want = classes.iter().position(|c| *c == label);
                    let mut scores = vec![0.0f64; classes.len()];
                    trees
                        .iter()
                        .map(|round| {
                            for (c, tree) in round.iter().enumerate() {
                                scores[c] += lr * tree.route(row);
                            }
                            match want {
                                Some(w) => softmax(&scores)[w],
                                None => 0.0,
                            }
                        })
                        .collect()
                })
                .collect(),
            Model::Regression { base, trees } => data
                .rows
                .iter()
                .map(|row| {
                    let mut f = *base;
                    trees
                        .iter()
                        .map(|tree| {
                            f += lr * tree.route(row);
                            f
                        })
                        .collect()
                })
                .collect(),
        };
        Ok(out)
    }

    /// Class probabilities from the final round (classification only).
    pub fn proba(&self, row: &Row) -> Option<Vec<f64>> {
        match &self.model {
            Model::Classification { classes, trees } => {
                let mut scores = vec![0.0f64; classes.len()];
                for round in trees {
                    for (c, tree) in round.iter().enumerate() {
                        scores[c] += self.params.learning_rate * tree.route(row);
                    }
                }
                Some(softmax(&scores))
            }
            Model::Regression { .. } => None,
        }
    }

    /// Final-round prediction: the argmax class (ties to the lower index)
    /// or the regression value.
    pub fn predict(&self, row: &Row) -> Value {
        match &self.model {
            Model::Classification { classes, .. } => {
                let p = self.proba(row).expect("classification model");
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                match self.schema.columns[self.schema.target_index()].kind {
                    crate::data::ColumnKind::Numeric => {
                        Value::Num(classes[best].parse().expect("numeric class labels parse back"))
                    }
                    crate::data::ColumnKind::Categorical => Value::Cat(classes[best].clone()),
                }
            }
            Model::Regression { base, trees } => {
                let mut f = *base;
                for tree in trees {
                    f += self.params.learning_rate * tree.route(row);
                }
                Value::Num(f)
            }
        }
    }

    /// Mean per-row loss of the final model: negative log-probability of
    /// the true label (floored at [`PROB_FLOOR`]) for classification,
    /// squared error for regression.
    pub fn surprisal(&self, data: &Dataset) -> Result<f64, BoostError> {
        self.check(data)?;
        if data.is_empty() {
            return Err(BoostError::Empty);
        }
        let target = data.schema.target_index();
        let total: f64 = match &self.model {
            Model::Classification { classes, .. } => data
                .rows
                .iter()
                .map(|row| {
                    let label = row[target].render();
                    let p = match classes.iter().position(|c| *c == label) {
                        Some(w) => self.proba(row).expect("classification model")[w],
                        None => 0.0,
                    };
                    -Float::ln(p.max(PROB_FLOOR))
                })
                .sum(),
            Model::Regression { .. } => data
                .rows
                .iter()
                .map(|row| {
                    let y = row[target].as_num().expect("regression target is numeric");
                    let d = match self.predict(row) {
                        Value::Num(f) => f - y,
                        Value::Cat(_) => unreachable!("regression predicts numbers"),
                    };
                    d * d
                })
                .sum(),
        };
        Ok(total / data.len() as f64)
    }
}

/// Training-dynamics summary of one row's trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    /// Fraction of rounds the model got the row right.
    pub correctness: f64,
    /// Higher is more confidently correct.
    pub confidence: f64,
    /// Spread of the model's opinion across rounds.
    pub uncertainty: f64,
}

fn mean_and_pop_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, Float::sqrt(var))
}

/// Classification: a round is correct when the true-label probability
/// strictly exceeds 0.5; confidence is the mean of that probability and
/// uncertainty its population spread.
pub fn dynamics_classification(p_true: &[f64]) -> Dynamics {
    let correct = p_true.iter().filter(|p| **p > 0.5).count() as f64 / p_true.len() as f64;
    let (mean, std) = mean_and_pop_std(p_true);
    Dynamics { correctness: correct, confidence: mean, uncertainty: std }
}

/// Regression: a round is correct when the prediction lands within `tau`
/// of the label; confidence is the negated mean absolute error and
/// uncertainty the population spread of the predictions.
pub fn dynamics_regression(preds: &[f64], y: f64, tau: f64) -> Dynamics {
    let correct = preds.iter().filter(|p| Float::abs(**p - y) <= tau).count() as f64 / preds.len() as f64;
    let mae = preds.iter().map(|p| Float::abs(*p - y)).sum::<f64>() / preds.len() as f64;
    let (_, std) = mean_and_pop_std(preds);
    Dynamics { correctness: correct, confidence: -mae, uncertainty: std }
}

/// Median absolute deviation from the median; the regression correctness
/// tolerance. Zero when more than half the values coincide — correctness
/// then demands exact hits, which is degenerate but well-defined.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| Float::abs(v - m)).collect();
    median(&dev)
}

fn median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InferOptions, Provenance};
    use alloc::format;
    use rand::{Rng, SeedableRng};

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("a,b,y\n");
        for _ in 0..n {
            let a: f64 = rng.random_range(0.0..10.0);
            let b: f64 = rng.random_range(0.0..10.0);
            text.push_str(&format!("{a:.3},{b:.3},{}\n", usize::from(a > 5.0)));
        }
        Dataset::from_csv(&text, None, &InferOptions::default(), Provenance::Real).unwrap()
    }

    fn linear(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut text = String::from("x,y\n");
        for _ in 0..n {
            let x: f64 = rng.random_range(0.0..10.0);
            text.push_str(&format!("{x:.3},{:.4}\n", 3.0 * x + 1.0));
        }
        let mut ds = Dataset::from_csv(&text, None, &InferOptions::default(), Provenance::Real).unwrap();
        ds.schema.task = Task::Regression;
        ds
    }

    #[test]
    fn separable_classification_fits() {
        let train = separable(80, 1);
        let model = train_boost(&train, &BoostParams::default()).unwrap();
        let correct = train
            .rows
            .iter()
            .zip(train.labels())
            .filter(|(row, label)| model.predict(row).render() == **label)
            .count();
        assert!(correct >= 78, "fit {correct}/80");
        assert!(model.surprisal(&train).unwrap() < 0.3);
    }

    #[test]
    fn training_surprisal_decreases_across_stages() {
        let train = separable(60, 2);
        // Round-by-round loss via the trace: staged consistency means the
        // t-th trace entry matches a t-round model's output.
        let model = train_boost(&train, &BoostParams::default()).unwrap();
        let traces = model.trace(&train).unwrap();
        let loss_at = |round: usize| -> f64 {
            traces.iter().map(|t| -Float::ln(t[round].max(PROB_FLOOR))).sum::<f64>() / traces.len() as f64
        };
        let first = loss_at(0);
        let last = loss_at(traces[0].len() - 1);
        assert!(last < first * 0.5, "loss shrinks: {first} -> {last}");
        for w in (0..traces[0].len()).collect::<Vec<_>>().windows(2) {
            assert!(loss_at(w[1]) <= loss_at(w[0]) + 1e-9, "monotone at round {}", w[1]);
        }
    }

    #[test]
    fn staged_trace_matches_truncated_model() {
        let train = separable(50, 3);
        let full = train_boost(&train, &BoostParams::default()).unwrap();
        let short =
            train_boost(&train, &BoostParams { rounds: 7, ..BoostParams::default() }).unwrap();
        let t_full = full.trace(&train).unwrap();
        for (row, tf) in train.rows.iter().zip(&t_full) {
            let label = row[train.schema.target_index()].render();
            let classes = short.classes().unwrap();
            let w = classes.iter().position(|c| *c == label).unwrap();
            let p_short = short.proba(row).unwrap()[w];
            assert!((tf[6] - p_short).abs() < 1e-12, "prefix property at round 7");
        }
    }

    #[test]
    fn regression_converges_to_line() {
        let train = linear(60, 4);
        let params = BoostParams { rounds: 200, ..BoostParams::default() };
        let model = train_boost(&train, &params).unwrap();
        assert!(model.surprisal(&train).unwrap() < 0.05);
    }

    #[test]
    fn unseen_label_hits_the_probability_floor() {
        let train = separable(40, 5);
        let model = train_boost(&train, &BoostParams::default()).unwrap();
        let mut other = train.clone();
        let t = other.schema.target_index();
        for row in &mut other.rows {
            row[t] = Value::Num(7.0);
        }
        // Schema cap says two classes; rows carry an unseen third. Every
        // row contributes exactly -ln(PROB_FLOOR).
        let s = model.surprisal(&other).unwrap();
        assert!((s - -Float::ln(PROB_FLOOR)).abs() < 1e-9);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let base = separable(20, 6);
        let keep: Vec<usize> = base
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| *l == "1")
            .map(|(i, _)| i)
            .collect();
        let single = base.subset(&keep);
        assert_eq!(train_boost(&single, &BoostParams::default()).unwrap_err(), BoostError::SingleClass);
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let cls = separable(30, 7);
        let reg = linear(30, 7);
        let model = train_boost(&cls, &BoostParams::default()).unwrap();
        assert_eq!(model.trace(&reg).unwrap_err(), BoostError::TaskMismatch);
    }

    #[test]
    fn dynamics_match_hand_computation() {
        let d = dynamics_classification(&[0.2, 0.6, 0.8]);
        assert!((d.correctness - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.confidence - 0.5333333333333333).abs() < 1e-12);
        let mean: f64 = (0.2 + 0.6 + 0.8) / 3.0;
        let var = ((0.2f64 - mean).powi(2) + (0.6 - mean).powi(2) + (0.8 - mean).powi(2)) / 3.0;
        assert!((d.uncertainty - var.sqrt()).abs() < 1e-12);

        let r = dynamics_regression(&[1.0, 2.0, 4.0], 2.0, 1.0);
        assert!((r.correctness - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.confidence - -1.0).abs() < 1e-12, "MAE (1+0+2)/3 = 1");
    }

    #[test]
    fn mad_is_the_median_deviation() {
        assert_eq!(mad(&[1.0, 2.0, 3.0, 4.0, 100.0]), 1.0);
        assert_eq!(mad(&[5.0, 5.0, 5.0]), 0.0);
        assert_eq!(mad(&[1.0, 3.0]), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let train = separable(40, 8);
        let a = train_boost(&train, &BoostParams::default()).unwrap();
        let b = train_boost(&train, &BoostParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
