//! Frechet distance between Gaussian fits of feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{EvalError, Result};

/// Added to both covariance diagonals before taking square roots.
pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FidStats {
    pub mean: DVector<f64>,
    /// Unbiased sample covariance.
    pub cov: DMatrix<f64>,
}

impl FidStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        FidStats { mean, cov }
    }

    pub fn from_features(features: &[Vec<f64>]) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(EvalError::TooFewSamples { need: 2, got: n });
        }
        let dim = features[0].len();
        if let Some(f) = features.iter().find(|f| f.len() != dim) {
            return Err(EvalError::DimensionMismatch(dim, f.len()));
        }
        let x = DMatrix::from_fn(n, dim, |i, j| features[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1) as f64;
        Ok(FidStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Square root of a symmetric positive semidefinite matrix; negative
/// eigenvalues from round-off are clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`, with
/// `Tr((S_a S_b)^(1/2))` taken as `Tr((A S_b A)^(1/2))` for `A = S_a^(1/2)`.
pub fn fid_from_stats(a: &FidStats, b: &FidStats, jitter: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimensionMismatch(a.dim(), b.dim()));
    }
    let eye = DMatrix::<f64>::identity(a.dim(), a.dim()) * jitter;
    let sa = &a.cov + &eye;
    let sb = &b.cov + &eye;
    let root_a = sym_sqrt(&sa);
    let cross = trace_sqrt(&(&root_a * &sb * &root_a));
    let diff = (&a.mean - &b.mean).norm_squared();
    let value = diff + sa.trace() + sb.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(EvalError::SingularCovariance);
    }
    Ok(value.max(0.0))
}

pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64> {
    let a = FidStats::from_features(features_a)?;
    let b = FidStats::from_features(features_b)?;
    fid_from_stats(&a, &b, DEFAULT_JITTER)
}
