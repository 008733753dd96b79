//! Dual-granularity redundancy filtering.
//!
//! The synthetic set is mapped onto the training rows it imitates (nearest
//! real seed under a range-normalized distance). How unevenly that proxy
//! distribution concentrates — its Gini coefficient `ratio_1` — drives
//! everything else: the high/low-density split, the chunk retention budget
//! `ratio_2`, and the instance-level thresholds. Chunks of the dense
//! region are kept or dropped wholesale by mean training-dynamics
//! correctness; sparse-region rows are kept individually when they are
//! both confident and stable. The chunk size is tuned by retraining the
//! reference model on each candidate's surviving union and keeping the one
//! the real training rows find least surprising.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::boost::{
    dynamics_classification, dynamics_regression, mad, train_boost, BoostError, BoostParams, Dynamics,
};
use crate::data::{column_stats, ColumnStats, DataError, Dataset, Provenance, Row, Schema, Task, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("distribution contains negative mass")]
    NegativeMass,
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("no synthetic rows to filter")]
    EmptySynthetic,
    #[error("synthetic rows use a different schema than the training data")]
    SchemaMismatch,
    #[error("invalid filter parameters: {0}")]
    BadParams(&'static str),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyMetric {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Slope of the log retention schedule.
    pub a: f64,
    /// Offset of the log retention schedule.
    pub b: f64,
    pub boost: BoostParams,
    /// Chunk sizes tried by the tuner.
    pub chunk_candidates: Vec<usize>,
    pub metric: ProxyMetric,
    /// Seeds the chunk shuffle (one permutation shared by every candidate).
    pub seed: u64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            a: 0.15,
            b: 0.55,
            boost: BoostParams::default(),
            chunk_candidates: (20..=60).step_by(5).collect(),
            metric: ProxyMetric::Gini,
            seed: 0,
        }
    }
}

/// Range-normalized row distance over feature columns: numeric cells
/// contribute `|a-b| / (max-min)` under the *training* ranges (0 when the
/// range is degenerate), categorical cells 0 or 1, averaged over
/// features. Synthetic values beyond the training range can push a
/// numeric term past 1; the distance is only guaranteed non-negative.
pub fn dcr(a: &Row, b: &Row, schema: &Schema, stats: &ColumnStats) -> f64 {
    let features = schema.feature_indices();
    let total: f64 = features
        .iter()
        .map(|&c| match (&a[c], &b[c]) {
            (Value::Num(x), Value::Num(y)) => {
                let (lo, hi) = stats.range(c).expect("numeric column has a range");
                let width = hi - lo;
                if width <= 0.0 {
                    0.0
                } else {
                    Float::abs(x - y) / width
                }
            }
            (Value::Cat(x), Value::Cat(y)) => f64::from(u8::from(x != y)),
            _ => 1.0,
        })
        .sum();
    total / features.len() as f64
}

/// The proxy distribution: every synthetic row is assigned to its nearest
/// training row (ties to the lowest index), and `p` is the resulting
/// seed-usage histogram normalized over the synthetic count.
#[derive(Debug, Clone, PartialEq)]
pub struct Proxy {
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    pub p: Vec<f64>,
}

pub fn build_proxy(train: &Dataset, syn: &Dataset, stats: &ColumnStats) -> Result<Proxy, FilterError> {
    if syn.schema != train.schema {
        return Err(FilterError::SchemaMismatch);
    }
    if train.is_empty() {
        return Err(FilterError::EmptyDistribution);
    }
    if syn.is_empty() {
        return Err(FilterError::EmptySynthetic);
    }
    let assignments: Vec<usize> = syn
        .rows
        .iter()
        .map(|s| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, t) in train.rows.iter().enumerate() {
                let d = dcr(s, t, &train.schema, stats);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut counts = alloc::vec![0usize; train.len()];
    for &a in &assignments {
        counts[a] += 1;
    }
    let total = assignments.len() as f64;
    let p = counts.iter().map(|&c| c as f64 / total).collect();
    Ok(Proxy { assignments, counts, p })
}

/// Gini coefficient of a mass vector: with the entries sorted ascending,
/// `sum_j (2j - n - 1) x_(j) / ((n - 1) * sum(x))`. Zero for a single
/// entry or an all-zero vector; clamped into [0,1]. Scale-free, so raw
/// counts and normalized frequencies agree.
pub fn gini(p: &[f64]) -> Result<f64, FilterError> {
    if p.is_empty() {
        return Err(FilterError::EmptyDistribution);
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(FilterError::NegativeMass);
    }
    let n = p.len();
    let sum: f64 = p.iter().sum();
    if n == 1 || sum == 0.0 {
        return Ok(0.0);
    }
    let mut sorted = p.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite mass"));
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(j0, x)| (2.0 * (j0 + 1) as f64 - n as f64 - 1.0) * x)
        .sum();
    Ok((weighted / ((n - 1) as f64 * sum)).clamp(0.0, 1.0))
}

/// Entropy-based concentration, the drop-in alternative to [`gini`]:
/// `1 - H(p) / ln(n)`. Also 0 for uniform mass and 1 for a point mass.
pub fn entropy_concentration(p: &[f64]) -> Result<f64, FilterError> {
    if p.is_empty() {
        return Err(FilterError::EmptyDistribution);
    }
    if p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(FilterError::NegativeMass);
    }
    let n = p.len();
    let sum: f64 = p.iter().sum();
    if n == 1 || sum == 0.0 {
        return Ok(0.0);
    }
    let h: f64 = p
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let q = v / sum;
            -q * Float::ln(q)
        })
        .sum();
    Ok((1.0 - h / Float::ln(n as f64)).clamp(0.0, 1.0))
}

pub fn concentration(p: &[f64], metric: ProxyMetric) -> Result<f64, FilterError> {
    match metric {
        ProxyMetric::Gini => gini(p),
        ProxyMetric::Entropy => entropy_concentration(p),
    }
}

/// High/low-density split of the synthetic set. `seed_order` holds the
/// training seeds sorted by proxy mass (descending, ties to the lower
/// index); `k` is the smallest prefix length — at least 1 — whose
/// cumulative mass reaches `ratio_1`, and `high` collects the synthetic
/// rows assigned to that prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySplit {
    pub k: usize,
    pub seed_order: Vec<usize>,
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

pub fn partition(proxy: &Proxy, ratio_1: f64) -> DensitySplit {
    let mut seed_order: Vec<usize> = (0..proxy.p.len()).collect();
    seed_order.sort_by(|&a, &b| {
        proxy.p[b].partial_cmp(&proxy.p[a]).expect("finite mass").then(a.cmp(&b))
    });
    // The prefix is never empty: at ratio_1 = 0 the single heaviest seed
    // still forms the dense region.
    let mut k = 0;
    let mut cum = 0.0;
    loop {
        cum += proxy.p[seed_order[k]];
        k += 1;
        if cum >= ratio_1 || k == seed_order.len() {
            break;
        }
    }
    let top: alloc::collections::BTreeSet<usize> = seed_order[..k].iter().copied().collect();
    let (high, low): (Vec<usize>, Vec<usize>) =
        (0..proxy.assignments.len()).partition(|i| top.contains(&proxy.assignments[*i]));
    DensitySplit { k, seed_order, high, low }
}

/// Chunk retention budget: `clamp(a ln(ratio_1) + b, 0, 1)`, and 0 for
/// non-positive `ratio_1` (nothing is concentrated, nothing to thin).
pub fn retention_ratio(ratio_1: f64, a: f64, b: f64) -> f64 {
    if ratio_1 <= 0.0 {
        return 0.0;
    }
    (a * Float::ln(ratio_1) + b).clamp(0.0, 1.0)
}

/// What the chunk filter did: surviving ids (ascending), every chunk's
/// mean-correctness score, and the retained chunk ids in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkOutcome {
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
    pub retained: Vec<usize>,
}

/// Chunk-level filter over the dense region. `ids` are shuffled once
/// (seeded), cut into `ceil(len / chunk_size)` consecutive chunks (the
/// last may be short and is scored like any other), ranked by mean
/// correctness (ties to the earlier chunk), and the top
/// `floor(ratio_2 * n_chunks)` survive. Survivors come back in ascending
/// id order.
pub fn chunk_filter(
    ids: &[usize],
    correctness: &[f64],
    chunk_size: usize,
    ratio_2: f64,
    seed: u64,
) -> Result<ChunkOutcome, FilterError> {
    if chunk_size == 0 {
        return Err(FilterError::BadParams("chunk_size must be at least 1"));
    }
    if ids.is_empty() {
        return Ok(ChunkOutcome { kept: Vec::new(), scores: Vec::new(), retained: Vec::new() });
    }
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let chunks: Vec<&[usize]> = shuffled.chunks(chunk_size).collect();
    let scores: Vec<f64> = chunks
        .iter()
        .map(|chunk| chunk.iter().map(|&i| correctness[i]).sum::<f64>() / chunk.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores").then(a.cmp(&b)));
    let keep = (ratio_2 * chunks.len() as f64) as usize; // floor
    let retained: Vec<usize> = order[..keep.min(chunks.len())].to_vec();
    let mut kept: Vec<usize> = retained.iter().flat_map(|&c| chunks[c].iter().copied()).collect();
    kept.sort_unstable();
    Ok(ChunkOutcome { kept, scores, retained })
}

fn mean_std_over(ids: &[usize], values: &[f64]) -> (f64, f64) {
    let n = ids.len() as f64;
    let mean = ids.iter().map(|&i| values[i]).sum::<f64>() / n;
    let var = ids.iter().map(|&i| (values[i] - mean) * (values[i] - mean)).sum::<f64>() / n;
    (mean, Float::sqrt(var))
}

/// Instance-filter result: surviving ids plus the thresholds that decided
/// them (absent when the sparse region was empty).
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceOutcome {
    pub kept: Vec<usize>,
    pub conf_threshold: Option<f64>,
    pub uncert_threshold: Option<f64>,
}

/// Instance-level filter over the sparse region: keep a row when its
/// confidence is at least `mean - ratio_1 * std` and its uncertainty at
/// most `mean + ratio_1 * std`, both statistics taken over the sparse
/// region itself (population std).
///
/// Both boundaries are inclusive, and tree-model dynamics are piecewise
/// constant, so exact ties across the whole region are routine — yet the
/// mean of n identical values can round one ulp past them and silently
/// drop everything. The comparisons therefore allow absolute rounding
/// slack far below any real spread in [0, 1]-scaled dynamics.
pub fn instance_filter(ids: &[usize], conf: &[f64], uncert: &[f64], ratio_1: f64) -> InstanceOutcome {
    const SLACK: f64 = 1e-9;
    if ids.is_empty() {
        return InstanceOutcome { kept: Vec::new(), conf_threshold: None, uncert_threshold: None };
    }
    let (conf_mean, conf_std) = mean_std_over(ids, conf);
    let (unc_mean, unc_std) = mean_std_over(ids, uncert);
    let conf_floor = conf_mean - ratio_1 * conf_std;
    let unc_ceil = unc_mean + ratio_1 * unc_std;
    InstanceOutcome {
        kept: ids
            .iter()
            .copied()
            .filter(|&i| conf[i] >= conf_floor - SLACK && uncert[i] <= unc_ceil + SLACK)
            .collect(),
        conf_threshold: Some(conf_floor),
        uncert_threshold: Some(unc_ceil),
    }
}

/// One tuning candidate's outcome. `surprisal` is `None` when the
/// candidate keeps nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEval {
    pub chunk_size: usize,
    pub chunk_scores: Vec<f64>,
    pub retained_chunks: Vec<usize>,
    pub kept_high: Vec<usize>,
    pub union: Vec<usize>,
    pub surprisal: Option<f64>,
}

/// Retrains the reference model on training ∪ the given synthetic
/// survivors and measures the training rows' surprisal. `None` for an
/// empty union — that would just re-train on the real rows and win by
/// overfitting, so such candidates are excluded from the argmin. Pure in
/// its inputs, so candidates can be evaluated in any order or in
/// parallel.
pub fn union_surprisal(
    train: &Dataset,
    syn: &Dataset,
    union: &[usize],
    boost: &BoostParams,
) -> Result<Option<f64>, FilterError> {
    if union.is_empty() {
        return Ok(None);
    }
    let mut rows = train.rows.clone();
    rows.extend(union.iter().map(|&i| syn.rows[i].clone()));
    let augmented = Dataset::new(train.schema.clone(), rows, Provenance::Real)?;
    Ok(Some(train_boost(&augmented, boost)?.surprisal(train)?))
}

/// Runs one candidate end to end: chunk-filter the dense region at this
/// size, join the instance-filter survivors, score via
/// [`union_surprisal`].
#[allow(clippy::too_many_arguments)]
pub fn evaluate_candidate(
    train: &Dataset,
    syn: &Dataset,
    high: &[usize],
    kept_low: &[usize],
    correctness: &[f64],
    chunk_size: usize,
    ratio_2: f64,
    shuffle_seed: u64,
    boost: &BoostParams,
) -> Result<CandidateEval, FilterError> {
    let chunk = chunk_filter(high, correctness, chunk_size, ratio_2, shuffle_seed)?;
    let mut union: Vec<usize> = chunk.kept.iter().chain(kept_low).copied().collect();
    union.sort_unstable();
    let surprisal = union_surprisal(train, syn, &union, boost)?;
    Ok(CandidateEval {
        chunk_size,
        chunk_scores: chunk.scores,
        retained_chunks: chunk.retained,
        kept_high: chunk.kept,
        union,
        surprisal,
    })
}

/// Argmin over candidate surprisals; exact ties go to the smaller chunk
/// size. `None` when no candidate kept anything.
pub fn select_best(evals: &[CandidateEval]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in evals.iter().enumerate() {
        let Some(s) = e.surprisal else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bs = evals[b].surprisal.expect("best has surprisal");
                s < bs || (s == bs && e.chunk_size < evals[b].chunk_size)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub proxy: Proxy,
    pub ratio_1: f64,
    pub ratio_2: f64,
    pub split: DensitySplit,
    pub instance: InstanceOutcome,
    pub evals: Vec<CandidateEval>,
    /// Index into `evals` of the winning candidate.
    pub best: Option<usize>,
    /// Final surviving synthetic row indices, ascending.
    pub kept: Vec<usize>,
    /// Concentration of the surviving rows' proxy distribution; absent
    /// when nothing survived.
    pub post_ratio_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CandidateReport {
    pub chunk_size: usize,
    pub n_chunks: usize,
    pub chunk_scores: Vec<f64>,
    pub retained_chunks: Vec<usize>,
    pub kept_high: usize,
    pub union: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surprisal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FilterReport {
    pub metric: ProxyMetric,
    pub ratio_1: f64,
    pub ratio_2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_ratio_1: Option<f64>,
    pub dense_seeds: usize,
    pub high_size: usize,
    pub low_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conf_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncert_threshold: Option<f64>,
    pub kept_low: usize,
    pub candidates: Vec<CandidateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_chunk_size: Option<usize>,
    pub input_total: usize,
    pub kept_total: usize,
}

impl FilterOutcome {
    pub fn report(&self, metric: ProxyMetric) -> FilterReport {
        FilterReport {
            metric,
            ratio_1: self.ratio_1,
            ratio_2: self.ratio_2,
            post_ratio_1: self.post_ratio_1,
            dense_seeds: self.split.k,
            high_size: self.split.high.len(),
            low_size: self.split.low.len(),
            conf_threshold: self.instance.conf_threshold,
            uncert_threshold: self.instance.uncert_threshold,
            kept_low: self.instance.kept.len(),
            candidates: self
                .evals
                .iter()
                .map(|e| CandidateReport {
                    chunk_size: e.chunk_size,
                    n_chunks: e.chunk_scores.len(),
                    chunk_scores: e.chunk_scores.clone(),
                    retained_chunks: e.retained_chunks.clone(),
                    kept_high: e.kept_high.len(),
                    union: e.union.len(),
                    surprisal: e.surprisal,
                })
                .collect(),
            chosen_chunk_size: self.best.map(|b| self.evals[b].chunk_size),
            input_total: self.proxy.assignments.len(),
            kept_total: self.kept.len(),
        }
    }
}

/// Per-row training dynamics of the synthetic rows under a reference
/// model fitted to the training data. The regression tolerance is the
/// median absolute deviation of the training targets.
pub fn syn_dynamics(
    train: &Dataset,
    syn: &Dataset,
    boost: &BoostParams,
) -> Result<Vec<Dynamics>, FilterError> {
    let model = train_boost(train, boost)?;
    let traces = model.trace(syn)?;
    let out = match train.schema.task {
        Task::Classification { .. } => traces.iter().map(|t| dynamics_classification(t)).collect(),
        Task::Regression => {
            let tau = mad(&train.numeric_targets()?);
            let target = syn.schema.target_index();
            traces
                .iter()
                .zip(&syn.rows)
                .map(|(t, row)| {
                    dynamics_regression(t, row[target].as_num().expect("numeric target"), tau)
                })
                .collect()
        }
    };
    Ok(out)
}

/// Proxy concentration of a surviving subset, under the original
/// assignments.
pub fn subset_concentration(
    proxy: &Proxy,
    kept: &[usize],
    metric: ProxyMetric,
) -> Result<f64, FilterError> {
    let mut counts = alloc::vec![0.0f64; proxy.p.len()];
    for &i in kept {
        counts[proxy.assignments[i]] += 1.0;
    }
    concentration(&counts, metric)
}

/// The full filtering pass. Candidate evaluations are memoized on the
/// surviving union, so candidates that collapse to the same survivor set
/// (e.g. every chunk size at least the dense-region size) cost one
/// retraining, not many.
pub fn run_filter(
    train: &Dataset,
    syn: &Dataset,
    params: &FilterParams,
) -> Result<FilterOutcome, FilterError> {
    if params.chunk_candidates.is_empty() {
        return Err(FilterError::BadParams("chunk_candidates must not be empty"));
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
    let shuffle_seed = crate::seed::mix(params.seed, 1);

    let mut evals = Vec::with_capacity(params.chunk_candidates.len());
    let mut memo: BTreeMap<Vec<usize>, Option<f64>> = BTreeMap::new();
    for &s in &params.chunk_candidates {
        let chunk = chunk_filter(&split.high, &correctness, s, ratio_2, shuffle_seed)?;
        let mut union: Vec<usize> = chunk.kept.iter().chain(&instance.kept).copied().collect();
        union.sort_unstable();
        let surprisal = match memo.get(&union) {
            Some(&cached) => cached,
            None => {
                let fresh = union_surprisal(train, syn, &union, &params.boost)?;
                memo.insert(union.clone(), fresh);
                fresh
            }
        };
        evals.push(CandidateEval {
            chunk_size: s,
            chunk_scores: chunk.scores,
            retained_chunks: chunk.retained,
            kept_high: chunk.kept,
            union,
            surprisal,
        });
    }
    let best = select_best(&evals);
    let kept = best.map(|b| evals[b].union.clone()).unwrap_or_default();
    let post_ratio_1 = if kept.is_empty() {
        None
    } else {
        Some(subset_concentration(&proxy, &kept, params.metric)?)
    };
    Ok(FilterOutcome { proxy, ratio_1, ratio_2, split, instance, evals, best, kept, post_ratio_1 })
}
