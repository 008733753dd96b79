//! Artifact IO. Every writer is deterministic — struct-ordered JSON keys
//! and no timestamps — so reruns with the same config and seeds produce
//! byte-identical files.

use std::path::{Path, PathBuf};

use refine_core::data::{DataError, Dataset, InferOptions, Provenance, Schema};
use refine_core::filter::Proxy;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    BadJson { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    BadData { path: PathBuf, source: DataError },
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

pub fn write_string(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|source| IoError::Write { path: path.to_path_buf(), source })?;
        }
    }
    std::fs::write(path, text).map_err(|source| IoError::Write { path: path.to_path_buf(), source })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_string(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| IoError::BadJson { path: path.to_path_buf(), source })
}

/// Loads a dataset from CSV, with the schema either read from a JSON
/// sidecar or inferred from the cells.
pub fn read_dataset(
    csv_path: &Path,
    schema_path: Option<&Path>,
    provenance: Provenance,
) -> Result<Dataset, IoError> {
    let schema: Option<Schema> = match schema_path {
        Some(p) => Some(read_json(p)?),
        None => None,
    };
    let text = read_to_string(csv_path)?;
    Dataset::from_csv(&text, schema, &InferOptions::default(), provenance)
        .map_err(|source| IoError::BadData { path: csv_path.to_path_buf(), source })
}

/// Reads a CSV against a known schema (used for artifacts produced by an
/// earlier stage, e.g. `syn.csv`).
pub fn read_dataset_with(
    csv_path: &Path,
    schema: &Schema,
    provenance: Provenance,
) -> Result<Dataset, IoError> {
    let text = read_to_string(csv_path)?;
    Dataset::from_csv(&text, Some(schema.clone()), &InferOptions::default(), provenance)
        .map_err(|source| IoError::BadData { path: csv_path.to_path_buf(), source })
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), IoError> {
    write_string(path, &data.to_csv())
}

/// Proxy distribution as CSV: one line per training seed with its
/// assigned-count and normalized share. `restrict` recounts over a
/// surviving subset of synthetic rows (the post-filter view).
pub fn write_proxy(path: &Path, proxy: &Proxy, restrict: Option<&[usize]>) -> Result<(), IoError> {
    let counts: Vec<usize> = match restrict {
        None => proxy.counts.clone(),
        Some(kept) => {
            let mut counts = vec![0usize; proxy.counts.len()];
            for &i in kept {
                counts[proxy.assignments[i]] += 1;
            }
            counts
        }
    };
    let total: usize = counts.iter().sum();
    let mut text = String::from("seed,count,p\n");
    for (seed, &count) in counts.iter().enumerate() {
        let p = if total == 0 { 0.0 } else { count as f64 / total as f64 };
        text.push_str(&format!("{seed},{count},{p}\n"));
    }
    write_string(path, &text)
}
