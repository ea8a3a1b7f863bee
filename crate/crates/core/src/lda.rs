//! Linear discriminant analysis with a pseudoinverse of the pooled
//! within-class covariance, so rank-deficient inputs (an embedding has at
//! most `p` informative directions) are handled without regularisation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::linalg::{argmax, right_svd, serde_rows};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// `K x d`, row `c` is the mean of class `c`.
    #[serde(with = "serde_rows")]
    means: DMatrix<f64>,
    /// `d x d` pseudoinverse of the pooled covariance.
    #[serde(with = "serde_rows")]
    pinv: DMatrix<f64>,
    log_priors: Vec<f64>,
}

/// Rows of `z` minus their class mean, and the class means.
fn centred(z: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
    let (n, d) = z.shape();
    if d == 0 {
        return Err(DteError::validation("LDA needs at least one input dimension"));
    }
    if labels.len() != n {
        return Err(DteError::validation(format!("{} labels for {n} rows", labels.len())));
    }
    let mut counts = vec![0usize; n_classes];
    for &c in labels {
        if c >= n_classes {
            return Err(DteError::validation(format!("label {c} outside 0..{n_classes}")));
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(DteError::validation(format!("class {c} has no training rows")));
    }
    let mut means = DMatrix::zeros(n_classes, d);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..d {
            means[(c, j)] += z[(i, j)];
        }
    }
    for (c, &k) in counts.iter().enumerate() {
        means.row_mut(c).scale_mut(1.0 / k as f64);
    }
    let mut resid = z.clone();
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..d {
            resid[(i, j)] -= means[(c, j)];
        }
    }
    Ok((resid, means, counts))
}

/// Pooled within-class covariance, divisor `n - K`.
pub fn pooled_covariance(z: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<DMatrix<f64>> {
    let (resid, _, _) = centred(z, labels, n_classes)?;
    let dof = dof(z.nrows(), n_classes)?;
    Ok(resid.tr_mul(&resid) / dof)
}

fn dof(n: usize, k: usize) -> Result<f64> {
    if n <= k {
        return Err(DteError::validation(format!("LDA needs more rows than classes, got {n} rows for {k} classes")));
    }
    Ok((n - k) as f64)
}

/// Fits class means, the covariance pseudoinverse and empirical log-priors.
///
/// The pseudoinverse comes from the SVD of the scaled residual matrix `R`
/// (`Σ = RᵀR`), which keeps the null directions of `Σ` at roundoff of
/// order `eps²` instead of `eps`. Eigenvalues `s²` at or below
/// `d · eps · λ_max` are dropped.
pub fn fit_lda(z: &DMatrix<f64>, labels: &[usize], n_classes: usize) -> Result<LdaModel> {
    let (resid, means, counts) = centred(z, labels, n_classes)?;
    let d = z.ncols();
    let scale = dof(z.nrows(), n_classes)?.sqrt();
    let (singular, v) = right_svd(&(resid / scale));
    let eig: Vec<f64> = singular.iter().map(|s| s * s).collect();
    let lambda_max = eig.first().copied().unwrap_or(0.0);
    let tol = d as f64 * f64::EPSILON * lambda_max;

    let mut pinv = DMatrix::zeros(d, d);
    for (k, &lambda) in eig.iter().enumerate() {
        if lambda > tol && lambda > 0.0 {
            let col = v.column(k);
            pinv += col * col.transpose() / lambda;
        }
    }
    let pinv = (&pinv + pinv.transpose()) * 0.5;
    let n = z.nrows() as f64;
    let log_priors = counts.iter().map(|&k| (k as f64 / n).ln()).collect();
    Ok(LdaModel { means, pinv, log_priors })
}

impl LdaModel {
    pub fn n_classes(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    pub fn covariance_pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn log_priors(&self) -> &[f64] {
        &self.log_priors
    }

    pub fn priors(&self) -> Vec<f64> {
        self.log_priors.iter().map(|l| l.exp()).collect()
    }

    /// `q x K` discriminant scores
    /// `δ_c(z) = zᵀΣ⁺M_c − ½M_cᵀΣ⁺M_c + log π_c`.
    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.dim() {
            return Err(DteError::DimensionMismatch { expected: self.dim(), got: z.ncols() });
        }
        let coef = &self.pinv * self.means.transpose();
        let mut s = z * &coef;
        for c in 0..self.n_classes() {
            let offset = -0.5 * self.means.row(c).dot(&coef.column(c).transpose()) + self.log_priors[c];
            s.column_mut(c).add_scalar_mut(offset);
        }
        Ok(s)
    }

    /// Highest-scoring class per row, lowest id on ties.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<usize>> {
        let s = self.scores(z)?;
        Ok(s.row_iter().map(|r| argmax(r.iter().copied()).unwrap_or(0)).collect())
    }

    /// Same means and covariance with other class priors.
    pub fn with_priors(&self, priors: &[f64]) -> Result<LdaModel> {
        if priors.len() != self.n_classes() || priors.iter().any(|&p| !(p > 0.0)) {
            return Err(DteError::validation("need one positive prior per class"));
        }
        let total: f64 = priors.iter().sum();
        Ok(LdaModel { log_priors: priors.iter().map(|p| (p / total).ln()).collect(), ..self.clone() })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let (k, d) = self.means.shape();
        if self.pinv.shape() != (d, d) || self.log_priors.len() != k {
            return Err(DteError::validation("inconsistent LDA model dimensions"));
        }
        Ok(())
    }
}
