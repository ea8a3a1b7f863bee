//! Small dense-matrix helpers shared by the modules.

use nalgebra::DMatrix;

use crate::error::{DteError, Result};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row vectors. `cols` is used when `rows` is empty.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    let width = rows.first().map_or(cols, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != width) {
        return Err(DteError::DimensionMismatch { expected: width, got: bad.len() });
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// Index of the largest value; ties go to the lowest index. `None` for an
/// empty slice or one containing only NaN.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b || v.is_nan() => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

const MAX_SWEEPS: usize = 80;

/// Singular values (descending) and right singular vectors (columns of
/// `V`) of `a`. Tall inputs are first reduced to their `d x d` triangular
/// QR factor, which shares `a`'s singular values and right vectors; the
/// factor is then diagonalised by one-sided Jacobi rotations, which keep
/// the small singular values accurate relative to the large ones.
pub fn right_svd(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = a.ncols();
    let mut r = if a.nrows() > d { a.clone().qr().r() } else { a.clone() };
    let mut v = DMatrix::<f64>::identity(d, d);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..d {
            for j in i + 1..d {
                let alpha = r.column(i).norm_squared();
                let beta = r.column(j).norm_squared();
                let gamma = r.column(i).dot(&r.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                for m in [&mut r, &mut v] {
                    for k in 0..m.nrows() {
                        let (x, y) = (m[(k, i)], m[(k, j)]);
                        m[(k, i)] = c * x - s * y;
                        m[(k, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..d).map(|j| r.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let values = order.iter().map(|&j| norms[j]).collect();
    let vectors = DMatrix::from_fn(d, d, |k, col| v[(k, order[col])]);
    (values, vectors)
}

pub(crate) mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows, 0).map_err(serde::de::Error::custom)
    }
}
