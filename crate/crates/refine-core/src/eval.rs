//! Machine-learning-efficiency evaluation: train the reference model on
//! (subsampled) synthetic rows and score it on held-out real rows, over
//! several subsampling seeds. Classification reports macro-F1, regression
//! R²; both come back as mean ± population std across seeds.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boost::{train_boost, BoostError, BoostParams};
use crate::data::{DataError, Dataset, Task, Value};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("cannot evaluate with an empty training or test set")]
    Empty,
    #[error("subsample drew a single class twice in a row")]
    SingleClassDraw,
    #[error("training and test data use different schemas")]
    SchemaMismatch,
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MleParams {
    /// Rows drawn (without replacement) per repetition, capped at the
    /// training set size.
    pub subsample: usize,
    /// Number of subsampling repetitions.
    pub repeats: usize,
    pub boost: BoostParams,
    pub seed: u64,
}

impl Default for MleParams {
    fn default() -> Self {
        MleParams { subsample: 1000, repeats: 10, boost: BoostParams::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MleResult {
    /// Mean score across repetitions: macro-F1 or R².
    pub mean: f64,
    /// Population standard deviation across repetitions.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Macro-averaged F1 over the union of observed label sets. A class with
/// zero precision-and-recall contributes an F1 of 0 — so a majority-class
/// predictor on balanced binary labels scores exactly 1/3.
pub fn macro_f1(pred: &[String], truth: &[String]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let mut labels: Vec<&String> = truth.iter().chain(pred).collect();
    labels.sort();
    labels.dedup();
    let mut total = 0.0;
    for label in &labels {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (p, t) in pred.iter().zip(truth) {
            match (p == *label, t == *label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        total += f1;
    }
    total / labels.len() as f64
}

/// Coefficient of determination. The mean predictor scores 0; a constant
/// truth vector scores 1 when matched exactly and 0 otherwise.
pub fn r2(pred: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

fn single_class(data: &Dataset, indices: &[usize]) -> bool {
    let t = data.schema.target_index();
    let first = data.rows[indices[0]][t].render();
    indices.iter().all(|&i| data.rows[i][t].render() == first)
}

/// One repetition's training subset: a seeded shuffle-and-take, re-sorted
/// so row order (and therefore the grown trees) is canonical. For
/// classification a single-class draw is redrawn once from the same
/// stream, then reported as an error.
fn subsample(data: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, EvalError> {
    let mut indices: Vec<usize> = (0..data.len()).collect();
    indices.shuffle(rng);
    let mut take: Vec<usize> = indices[..n].to_vec();
    take.sort_unstable();
    if matches!(data.schema.task, Task::Classification { .. }) && single_class(data, &take) {
        indices.shuffle(rng);
        take = indices[..n].to_vec();
        take.sort_unstable();
        if single_class(data, &take) {
            return Err(EvalError::SingleClassDraw);
        }
    }
    Ok(take)
}

/// Scores `train`-derived models on `test` over `repeats` subsampling
/// seeds.
pub fn evaluate_mle(train: &Dataset, test: &Dataset, params: &MleParams) -> Result<MleResult, EvalError> {
    if train.is_empty() || test.is_empty() {
        return Err(EvalError::Empty);
    }
    if train.schema != test.schema {
        return Err(EvalError::SchemaMismatch);
    }
    let n = params.subsample.min(train.len()).max(1);
    let mut per_seed = Vec::with_capacity(params.repeats);
    for rep in 0..params.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(params.seed, rep as u64));
        let subset = train.subset(&subsample(train, n, &mut rng)?);
        let model = train_boost(&subset, &params.boost)?;
        let score = match train.schema.task {
            Task::Classification { .. } => {
                let pred: Vec<String> = test.rows.iter().map(|r| model.predict(r).render()).collect();
                macro_f1(&pred, &test.labels())
            }
            Task::Regression => {
                let pred: Vec<f64> = test
                    .rows
                    .iter()
                    .map(|r| match model.predict(r) {
                        Value::Num(v) => v,
                        Value::Cat(_) => unreachable!("regression predicts numbers"),
                    })
                    .collect();
                r2(&pred, &test.numeric_targets()?)
            }
        };
        per_seed.push(score);
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let var = per_seed.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / per_seed.len() as f64;
    Ok(MleResult { mean, std: Float::sqrt(var), per_seed })
}
