//! Plain-text matrices: one frame per line, values separated by spaces.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn write_matrix_text(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 12);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_text(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Format(format!("bad matrix value {v}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("ragged matrix rows".into()));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| Error::Format(e.to_string()))
}
