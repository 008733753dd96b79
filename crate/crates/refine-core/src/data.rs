//! Schema-typed tabular datasets and the statistics the rest of the
//! pipeline leans on.
//!
//! A [`Dataset`] is an ordered list of rows validated against a [`Schema`]:
//! one value per column, numeric cells finite. Class labels are canonical
//! cell text (numeric labels go through `f64` display, so `1.0` and `1`
//! collapse to the same class). All randomness is ChaCha-seeded so a split
//! made on one platform is byte-identical on another.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csv;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("header declares no columns")]
    NoColumns,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column name is empty")]
    EmptyColumnName,
    #[error("target column `{0}` not in schema")]
    UnknownTarget(String),
    #[error("classification task needs at least two classes, found {0}")]
    TooFewClasses(usize),
    #[error("row {row}: expected {expected} cells, found {found}")]
    CellCount { row: usize, expected: usize, found: usize },
    #[error("row {row}, column `{column}`: `{value}` is not a finite number")]
    NotNumeric { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: category `{value}` outside the observed vocabulary")]
    UnknownCategory { row: usize, column: String, value: String },
    #[error("header does not match schema: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("column `{0}` is not numeric")]
    NotNumericColumn(String),
    #[error("train size {n} is not divisible by {classes} classes")]
    SplitNotDivisible { n: usize, classes: usize },
    #[error("class `{label}` has {available} rows, split needs {needed}")]
    SplitClassTooSmall { label: String, available: usize, needed: usize },
    #[error("train size {needed} exceeds {available} available rows")]
    SplitTooLarge { needed: usize, available: usize },
    #[error("train size must be positive")]
    SplitEmpty,
    #[error(transparent)]
    Csv(#[from] csv::CsvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    /// Free-text meaning of the column, surfaced verbatim in prompts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Open-vocabulary categorical columns accept synthetic categories that
    /// were never observed in the seed data.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub open: bool,
}

impl ColumnDef {
    pub fn numeric(name: &str) -> Self {
        ColumnDef { name: name.to_string(), kind: ColumnKind::Numeric, description: None, open: false }
    }

    pub fn categorical(name: &str) -> Self {
        ColumnDef { name: name.to_string(), kind: ColumnKind::Categorical, description: None, open: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Classification { num_classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnDef>,
    pub target: String,
    pub task: Task,
}

impl Schema {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.columns.is_empty() {
            return Err(DataError::NoColumns);
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(DataError::EmptyColumnName);
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::DuplicateColumn(c.name.clone()));
            }
        }
        if !seen.contains(self.target.as_str()) {
            return Err(DataError::UnknownTarget(self.target.clone()));
        }
        if let Task::Classification { num_classes } = self.task {
            if num_classes < 2 {
                return Err(DataError::TooFewClasses(num_classes));
            }
        }
        Ok(())
    }

    /// Index of the target column. The schema must have been validated.
    pub fn target_index(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.name == self.target)
            .expect("validated schema has its target column")
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Column indices excluding the target, in schema order.
    pub fn feature_indices(&self) -> Vec<usize> {
        let t = self.target_index();
        (0..self.columns.len()).filter(|&i| i != t).collect()
    }
}

/// One typed cell. Numeric values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }

    /// Canonical cell text: shortest round-tripping form for numbers.
    pub fn render(&self) -> String {
        match self {
            Value::Num(x) => format!("{x}"),
            Value::Cat(s) => s.clone(),
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub rows: Vec<Row>,
    pub provenance: Provenance,
}

fn parse_finite(text: &str) -> Option<f64> {
    text.parse::<f64>().ok().filter(|x| x.is_finite())
}

impl Dataset {
    /// Builds a dataset, checking every row against the schema.
    pub fn new(schema: Schema, rows: Vec<Row>, provenance: Provenance) -> Result<Self, DataError> {
        schema.validate()?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(DataError::CellCount { row: i, expected: schema.columns.len(), found: row.len() });
            }
            for (col, cell) in schema.columns.iter().zip(row) {
                let ok = match (col.kind, cell) {
                    (ColumnKind::Numeric, Value::Num(x)) => x.is_finite(),
                    (ColumnKind::Categorical, Value::Cat(_)) => true,
                    _ => false,
                };
                if !ok {
                    return Err(DataError::NotNumeric { row: i, column: col.name.clone(), value: cell.render() });
                }
            }
        }
        Ok(Dataset { schema, rows, provenance })
    }

    /// Parses CSV text. With `schema: None` the schema is inferred from the
    /// cells; otherwise the header must match the schema exactly.
    pub fn from_csv(
        text: &str,
        schema: Option<Schema>,
        opts: &InferOptions,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let records = csv::parse_records(text)?;
        let (header, body) = records.split_first().ok_or(DataError::Empty)?;
        let schema = match schema {
            Some(s) => {
                let names: Vec<&str> = s.columns.iter().map(|c| c.name.as_str()).collect();
                if header.len() != names.len() || header.iter().zip(&names).any(|(h, n)| h != n) {
                    return Err(DataError::HeaderMismatch {
                        expected: names.join(","),
                        found: header.join(","),
                    });
                }
                s
            }
            None => infer_schema(header, body, opts)?,
        };
        let mut rows = Vec::with_capacity(body.len());
        for (i, record) in body.iter().enumerate() {
            if record.len() != schema.columns.len() {
                return Err(DataError::CellCount { row: i, expected: schema.columns.len(), found: record.len() });
            }
            let mut row = Vec::with_capacity(record.len());
            for (col, cell) in schema.columns.iter().zip(record) {
                row.push(match col.kind {
                    ColumnKind::Numeric => Value::Num(parse_finite(cell).ok_or_else(|| DataError::NotNumeric {
                        row: i,
                        column: col.name.clone(),
                        value: cell.clone(),
                    })?),
                    ColumnKind::Categorical => Value::Cat(cell.clone()),
                });
            }
            rows.push(row);
        }
        Dataset::new(schema, rows, provenance)
    }

    /// Serializes to CSV with a header row; numeric cells use the shortest
    /// round-tripping form, so parsing back yields an identical dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.schema.columns.iter().map(|c| c.name.clone()).collect();
        csv::write_record(&header, &mut out);
        let mut buf: Vec<String> = Vec::with_capacity(header.len());
        for row in &self.rows {
            buf.clear();
            buf.extend(row.iter().map(Value::render));
            csv::write_record(&buf, &mut out);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Canonical target text per row.
    pub fn labels(&self) -> Vec<String> {
        let t = self.schema.target_index();
        self.rows.iter().map(|r| r[t].render()).collect()
    }

    /// Sorted distinct target labels.
    pub fn class_labels(&self) -> Vec<String> {
        let t = self.schema.target_index();
        let set: BTreeSet<String> = self.rows.iter().map(|r| r[t].render()).collect();
        set.into_iter().collect()
    }

    /// Target column as numbers; errors when the target is categorical.
    pub fn numeric_targets(&self) -> Result<Vec<f64>, DataError> {
        let t = self.schema.target_index();
        self.rows
            .iter()
            .map(|r| r[t].as_num().ok_or_else(|| DataError::NotNumericColumn(self.schema.target.clone())))
            .collect()
    }

    /// Dataset with the given rows of `self`, in the order of `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            provenance: self.provenance,
        }
    }

    /// Checks categorical cells against the observed vocabulary in `stats`,
    /// skipping columns the schema marks open.
    pub fn validate_vocabulary(&self, stats: &ColumnStats) -> Result<(), DataError> {
        for (i, row) in self.rows.iter().enumerate() {
            for (c, col) in self.schema.columns.iter().enumerate() {
                if col.open {
                    continue;
                }
                if let (Value::Cat(v), ColumnSummary::Categorical { frequencies }) = (&row[c], &stats.columns[c]) {
                    if !frequencies.contains_key(v) {
                        return Err(DataError::UnknownCategory { row: i, column: col.name.clone(), value: v.clone() });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-column summaries over one dataset. Standard deviation is the
/// population form (divide by n).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ColumnSummary {
    Numeric { min: f64, max: f64, mean: f64, std: f64 },
    Categorical { frequencies: BTreeMap<String, usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub columns: Vec<ColumnSummary>,
}

impl ColumnStats {
    /// `(min, max)` of a numeric column.
    pub fn range(&self, index: usize) -> Option<(f64, f64)> {
        match &self.columns[index] {
            ColumnSummary::Numeric { min, max, .. } => Some((*min, *max)),
            ColumnSummary::Categorical { .. } => None,
        }
    }

    pub fn vocabulary(&self, index: usize) -> Option<&BTreeMap<String, usize>> {
        match &self.columns[index] {
            ColumnSummary::Categorical { frequencies } => Some(frequencies),
            ColumnSummary::Numeric { .. } => None,
        }
    }
}

pub fn column_stats(data: &Dataset) -> Result<ColumnStats, DataError> {
    if data.rows.is_empty() {
        return Err(DataError::Empty);
    }
    let n = data.rows.len() as f64;
    let columns = data
        .schema
        .columns
        .iter()
        .enumerate()
        .map(|(c, col)| match col.kind {
            ColumnKind::Numeric => {
                let xs: Vec<f64> = data.rows.iter().map(|r| r[c].as_num().expect("validated numeric cell")).collect();
                let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
                for &x in &xs {
                    min = min.min(x);
                    max = max.max(x);
                    sum += x;
                }
                let mean = sum / n;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                // Qualified call: libm-backed in every build, never std math.
                ColumnSummary::Numeric { min, max, mean, std: num_traits::Float::sqrt(var) }
            }
            ColumnKind::Categorical => {
                let mut frequencies = BTreeMap::new();
                for r in &data.rows {
                    if let Value::Cat(v) = &r[c] {
                        *frequencies.entry(v.clone()).or_insert(0) += 1;
                    }
                }
                ColumnSummary::Categorical { frequencies }
            }
        })
        .collect();
    Ok(ColumnStats { columns })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    /// Target column name; defaults to the last column.
    pub target: Option<String>,
    /// An integer-valued target with at most this many distinct values is
    /// treated as classification rather than regression.
    pub class_cap: usize,
}

impl Default for InferOptions {
    fn default() -> Self {
        InferOptions { target: None, class_cap: 20 }
    }
}

/// Infers a schema from raw cells: a column is numeric iff every cell
/// parses as a finite number.
pub fn infer_schema(header: &[String], body: &[Vec<String>], opts: &InferOptions) -> Result<Schema, DataError> {
    if header.is_empty() {
        return Err(DataError::NoColumns);
    }
    if body.is_empty() {
        return Err(DataError::Empty);
    }
    for (i, record) in body.iter().enumerate() {
        if record.len() != header.len() {
            return Err(DataError::CellCount { row: i, expected: header.len(), found: record.len() });
        }
    }
    let target = match &opts.target {
        Some(name) => name.clone(),
        None => header.last().expect("non-empty header").clone(),
    };
    let columns: Vec<ColumnDef> = header
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let numeric = body.iter().all(|r| parse_finite(&r[c]).is_some());
            ColumnDef {
                name: name.clone(),
                kind: if numeric { ColumnKind::Numeric } else { ColumnKind::Categorical },
                description: None,
                open: false,
            }
        })
        .collect();
    let t = columns
        .iter()
        .position(|c| c.name == target)
        .ok_or_else(|| DataError::UnknownTarget(target.clone()))?;
    let task = match columns[t].kind {
        ColumnKind::Categorical => {
            let distinct: BTreeSet<&str> = body.iter().map(|r| r[t].as_str()).collect();
            Task::Classification { num_classes: distinct.len() }
        }
        ColumnKind::Numeric => {
            let values: Vec<f64> = body.iter().map(|r| parse_finite(&r[t]).expect("numeric column")).collect();
            let integral = values.iter().all(|x| num_traits::Float::fract(*x) == 0.0);
            let distinct: BTreeSet<String> = values.iter().map(|x| format!("{x}")).collect();
            if integral && distinct.len() <= opts.class_cap {
                Task::Classification { num_classes: distinct.len() }
            } else {
                Task::Regression
            }
        }
    };
    let schema = Schema { columns, target, task };
    schema.validate()?;
    Ok(schema)
}

/// Splits off a seeded training set of exactly `n` rows; the rest become
/// the test set. Classification draws n / num_classes rows per class.
/// Row order within each side follows the original dataset.
pub fn stratified_split(data: &Dataset, n: usize, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    if n == 0 {
        return Err(DataError::SplitEmpty);
    }
    if n > data.len() {
        return Err(DataError::SplitTooLarge { needed: n, available: data.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    match data.schema.task {
        Task::Classification { .. } => {
            let labels = data.labels();
            let classes = data.class_labels();
            if n % classes.len() != 0 {
                return Err(DataError::SplitNotDivisible { n, classes: classes.len() });
            }
            let quota = n / classes.len();
            for class in &classes {
                let mut indices: Vec<usize> =
                    (0..data.len()).filter(|&i| &labels[i] == class).collect();
                if indices.len() < quota {
                    return Err(DataError::SplitClassTooSmall {
                        label: class.clone(),
                        available: indices.len(),
                        needed: quota,
                    });
                }
                indices.shuffle(&mut rng);
                chosen.extend_from_slice(&indices[..quota]);
            }
        }
        Task::Regression => {
            let mut indices: Vec<usize> = (0..data.len()).collect();
            indices.shuffle(&mut rng);
            chosen.extend_from_slice(&indices[..n]);
        }
    }
    chosen.sort_unstable();
    let picked: BTreeSet<usize> = chosen.iter().copied().collect();
    let rest: Vec<usize> = (0..data.len()).filter(|i| !picked.contains(i)).collect();
    Ok((data.subset(&chosen), data.subset(&rest)))
}
