//! Evaluation utilities: RMSE between distance matrices, per-pair error
//! statistics, matrix CSV serialization, and wall-clock timing helpers.

use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pair error statistics over the strict upper triangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorStats {
    pub pairs: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
}

/// Evaluation record for one run: accuracy plus the timing split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub stats: ErrorStats,
    /// Anchor/model training seconds (0 for training-free methods).
    pub train_seconds: f64,
    /// Pairwise distance computation seconds, excluding training/parsing.
    pub dist_seconds: f64,
    pub method: String,
    pub seed: u64,
    pub k: usize,
}

/// RMSE over the strict upper triangle (the diagonal is identically zero
/// for distance matrices and would deflate the error).
pub fn rmse_upper_triangle(approx: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    let stats = error_stats(approx, truth)?;
    if stats.pairs == 0 {
        return Ok(0.0);
    }
    let mut sq = 0.0;
    let n = approx.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = approx[[i, j]] - truth[[i, j]];
            sq += d * d;
        }
    }
    Ok((sq / stats.pairs as f64).sqrt())
}

/// Max and mean absolute per-pair error over the strict upper triangle.
pub fn error_stats(approx: &Array2<f64>, truth: &Array2<f64>) -> Result<ErrorStats> {
    if approx.dim() != truth.dim() {
        return Err(Error::invalid(format!(
            "matrix shapes differ: {:?} vs {:?}",
            approx.dim(),
            truth.dim()
        )));
    }
    if approx.nrows() != approx.ncols() {
        return Err(Error::invalid("distance matrices must be square"));
    }
    let n = approx.nrows();
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (approx[[i, j]] - truth[[i, j]]).abs();
            max_abs = max_abs.max(d);
            sum_abs += d;
            pairs += 1;
        }
    }
    Ok(ErrorStats {
        pairs,
        max_abs,
        mean_abs: if pairs > 0 { sum_abs / pairs as f64 } else { 0.0 },
    })
}

/// Plain-decimal formatting with 12 significant digits; deterministic, so
/// equal matrices always serialize to identical bytes.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (11 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes a matrix as headerless comma-separated rows.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_sig12(v)).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headerless comma-separated matrix; every row must have the same
/// width, errors carry line numbers.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: 0,
        message: format!("cannot open: {e}"),
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| Error::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: format!("expected number, got {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: format!("row has {} columns, expected {w}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?;
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat)
        .map_err(|e| Error::invalid(format!("matrix shape: {e}")))
}

/// Runs `f` and returns its output with elapsed wall-clock seconds from a
/// monotonic clock.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
