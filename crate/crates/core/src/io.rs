//! Text and JSON file formats plus atomic file writes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::matrix::Matrix;
use crate::mixture::{ActivationDataset, MixtureError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing input file {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a temporary sibling file and an atomic rename, so readers never
/// observe a partial file.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::Io { path: path.to_owned(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(wrap)?;
    }
    let file_name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_file_name(format!(".{file_name}.{}.{n}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(wrap)?;
    f.write_all(contents).map_err(wrap)?;
    drop(f);
    fs::rename(&tmp, path).map_err(wrap)
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    if !path.exists() {
        return Err(IoError::Missing(path.to_owned()));
    }
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_owned(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_owned(), source })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_owned(), source })
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).map_err(|source| IoError::Json { path: path.to_owned(), source })?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| IoError::Json { path: path.to_owned(), source }))
        .collect()
}

/// Matrix text format: header `<rows> <cols> <name>`, then one space-separated row per line.
pub fn matrix_to_string<T: Scalar>(name: &str, m: &Matrix<T>) -> String {
    let mut s = format!("{} {} {}\n", m.rows(), m.cols(), name);
    for row in m.iter_rows() {
        let parts: Vec<String> = row.iter().map(|v| fmt_f64(v.as_f64())).collect();
        s.push_str(&parts.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_matrix<T: Scalar>(path: &Path, text: &str) -> Result<(String, Matrix<T>), IoError> {
    let perr = |line: usize, msg: String| IoError::Parse { path: path.to_owned(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 3 {
        return Err(perr(1, format!("expected `<rows> <cols> <name>`, got `{header}`")));
    }
    let rows: usize = h[0].parse().map_err(|e| perr(1, format!("rows: {e}")))?;
    let cols: usize = h[1].parse().map_err(|e| perr(1, format!("cols: {e}")))?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (ln, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|e| perr(ln + 1, format!("`{tok}`: {e}")))?;
            data.push(T::of(v));
        }
        if data.len() - before != cols {
            return Err(perr(ln + 1, format!("expected {cols} values, got {}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(perr(1, format!("header declares {rows} rows, found {seen}")));
    }
    let m = Matrix::from_vec(rows, cols, data).expect("counted");
    Ok((h[2].to_owned(), m))
}

pub fn write_activations<T: Scalar>(path: &Path, ds: &ActivationDataset<T>) -> Result<(), IoError> {
    atomic_write(path, matrix_to_string(ds.layer_name(), ds.data()).as_bytes())
}

pub fn read_activations<T: Scalar>(path: &Path) -> Result<ActivationDataset<T>, IoError> {
    let (name, m) = parse_matrix(path, &read_to_string(path)?)?;
    Ok(ActivationDataset::new(name, m)?)
}

/// Observation sets share the activation file format with the name `observation`.
pub fn write_observations(path: &Path, obs: &Matrix<f64>) -> Result<(), IoError> {
    atomic_write(path, matrix_to_string("observation", obs).as_bytes())
}

pub fn read_observations(path: &Path) -> Result<Matrix<f64>, IoError> {
    Ok(parse_matrix(path, &read_to_string(path)?)?.1)
}

/// Formats an optional value for CSV output; `None` becomes `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), fmt_f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_file_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        let ds = ActivationDataset::from_rows("fc0", &[vec![0.1, 1.0 / 3.0], vec![-2e-300, 12345.678]]).unwrap();
        write_activations(&p, &ds).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("2 2 fc0\n"));
        assert_eq!(read_activations::<f64>(&p).unwrap(), ds);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_matrix::<f64>(Path::new("x"), "2 2 fc0\n1 2\n3\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
        assert!(matches!(read_to_string(Path::new("/nonexistent/file")), Err(IoError::Missing(_))));
    }
}
