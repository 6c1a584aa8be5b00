//! Row-list conversions shared by the bindings.

use eivreg::matcore::Mat;
use eivreg::{Error, Result};

/// Builds a matrix from nested rows; every row must have the same length.
pub fn mat_from_rows(rows: &[Vec<f64>], what: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::ShapeMismatch(format!("{what} is empty")));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::ShapeMismatch(format!(
            "{what}: row {} has {} entries, expected {c}",
            i + 1,
            rows[i].len()
        )));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
