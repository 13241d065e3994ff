//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("ragged matrix: row {row} has {got} entries, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{what}: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Mismatch {
        what: String,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ShapeError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(ShapeError::Ragged {
                row: i,
                got: r.len(),
                expected: ncols,
            });
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn expect_shape(
    what: impl Into<String>,
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<(), ShapeError> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(ShapeError::Mismatch {
            what: what.into(),
            expected_rows: rows,
            expected_cols: cols,
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Spectral radius via the (possibly complex) eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// 2-norm condition number from singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn weighted_sum<'a>(
    weights: &[f64],
    mats: impl IntoIterator<Item = &'a DMatrix<f64>>,
) -> DMatrix<f64> {
    let mut it = mats.into_iter().zip(weights);
    let (first, w0) = it.next().expect("at least one matrix");
    let mut acc = first * *w0;
    for (m, w) in it {
        acc += m * *w;
    }
    acc
}

/// Serde adapter: a matrix as row-major nested arrays.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let raw = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&raw).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Vec<DMatrix<f64>>`.
pub mod rows_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let raw = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        raw.iter()
            .map(|r| from_rows(r).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serde adapter for `Vec<Vec<DMatrix<f64>>>`.
pub mod rows_nested {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vec<DMatrix<f64>>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|inner| inner.iter().map(to_rows).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Vec<Vec<DMatrix<f64>>>, D::Error> {
        let raw = Vec::<Vec<Vec<Vec<f64>>>>::deserialize(d)?;
        raw.iter()
            .map(|inner| {
                inner
                    .iter()
                    .map(|r| from_rows(r).map_err(serde::de::Error::custom))
                    .collect()
            })
            .collect()
    }
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
