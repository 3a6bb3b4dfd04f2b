//! Correlation analysis and PCA on the `[v, v̇, v̈, P]` data matrix.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Dataset;

pub const COLUMN_NAMES: [&str; 4] = ["v", "vdot", "vddot", "P"];

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("column `{0}` has zero variance")]
    DegenerateColumn(&'static str),
    #[error("need at least {need} rows, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("expected 4 columns, got {0}")]
    BadShape(usize),
}

/// Rows in (trajectory, time) order; columns `[v, v̇, v̈, P]`. Derivative
/// columns are always present because ingestion fills them.
pub fn build_data_matrix(ds: &Dataset) -> DMatrix<f64> {
    let rows: Vec<[f64; 4]> = ds.samples().map(|s| [s.v, s.v_dot, s.v_ddot, s.p]).collect();
    DMatrix::from_fn(rows.len(), 4, |r, c| rows[r][c])
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Two-pass Pearson correlation. `None` if either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub p_v: f64,
    pub p_vdot: f64,
    pub p_vddot: f64,
}

fn check_shape(x: &DMatrix<f64>, need: usize) -> Result<(), StatsError> {
    if x.ncols() != 4 {
        return Err(StatsError::BadShape(x.ncols()));
    }
    if x.nrows() < need {
        return Err(StatsError::TooFewSamples { need, got: x.nrows() });
    }
    Ok(())
}

/// corr(P, v), corr(P, v̇), corr(P, v̈).
pub fn correlations(x: &DMatrix<f64>) -> Result<Correlations, StatsError> {
    check_shape(x, 3)?;
    let cols: Vec<Vec<f64>> = (0..4).map(|c| x.column(c).iter().copied().collect()).collect();
    let corr = |c: usize| {
        pearson(&cols[3], &cols[c]).ok_or_else(|| {
            let degenerate = if pearson(&cols[c], &cols[c]).is_none() { c } else { 3 };
            StatsError::DegenerateColumn(COLUMN_NAMES[degenerate])
        })
    };
    Ok(Correlations {
        p_v: corr(0)?,
        p_vdot: corr(1)?,
        p_vddot: corr(2)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// `eigenvectors[r][c]`: weight of variable `r` in component `c`.
    pub eigenvectors: [[f64; 4]; 4],
    /// Eigenvalues of the correlation matrix, descending.
    pub eigenvalues: [f64; 4],
    pub lambda_norm: [f64; 4],
    pub mu: [f64; 4],
    /// Sample standard deviations (N − 1 denominator).
    pub sigma: [f64; 4],
}

impl PcaResult {
    pub fn eigenvector_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.eigenvectors[r][c])
    }

    /// `(X − μ) / σ`.
    pub fn standardize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), 4, |r, c| (x[(r, c)] - self.mu[c]) / self.sigma[c])
    }

    /// Principal-component scores `X′ V`.
    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.eigenvector_matrix();
        let v = DMatrix::from_fn(4, 4, |r, c| v[(r, c)]);
        self.standardize(x) * v
    }

    /// Aligned text table: one row per variable, one column per PC, then
    /// the normalized eigenvalues.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8} | {:>8} {:>8} {:>8} {:>8}", "", "PC1", "PC2", "PC3", "PC4");
        let _ = writeln!(s, "{}", "-".repeat(47));
        for (r, name) in COLUMN_NAMES.iter().enumerate() {
            let w = self.eigenvectors[r];
            let _ = writeln!(
                s,
                "{:>8} | {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name, w[0], w[1], w[2], w[3]
            );
        }
        let _ = writeln!(s, "{}", "-".repeat(47));
        let l = self.lambda_norm;
        let _ = writeln!(
            s,
            "{:>8} | {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            "lambda", l[0], l[1], l[2], l[3]
        );
        s
    }
}

/// PCA of the standardized matrix: eigen-decomposition of
/// `X′ᵀX′ / (N − 1)` (the sample correlation matrix). Components are
/// sorted by descending eigenvalue and each eigenvector is signed so that
/// its largest-magnitude entry is positive.
pub fn pca(x: &DMatrix<f64>) -> Result<PcaResult, StatsError> {
    check_shape(x, 5)?;
    let n = x.nrows() as f64;
    let mut mu = [0.0; 4];
    let mut sigma = [0.0; 4];
    for c in 0..4 {
        let col = x.column(c);
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 || !var.is_finite() {
            return Err(StatsError::DegenerateColumn(COLUMN_NAMES[c]));
        }
        mu[c] = m;
        sigma[c] = var.sqrt();
    }
    let mut s = Matrix4::<f64>::zeros();
    for row in x.row_iter() {
        let z: [f64; 4] = std::array::from_fn(|c| (row[c] - mu[c]) / sigma[c]);
        for a in 0..4 {
            for b in a..4 {
                s[(a, b)] += z[a] * z[b];
            }
        }
    }
    for a in 0..4 {
        for b in a..4 {
            s[(a, b)] /= n - 1.0;
            s[(b, a)] = s[(a, b)];
        }
    }

    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let trace: f64 = eig.eigenvalues.iter().sum();
    let mut eigenvectors = [[0.0; 4]; 4];
    let mut eigenvalues = [0.0; 4];
    for (c, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = (0..4).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..4 {
            eigenvectors[r][c] = sign * col[r];
        }
        // round-off can leave rank-deficient directions at -1e-16
        eigenvalues[c] = eig.eigenvalues[src].max(0.0);
    }
    let lambda_norm = eigenvalues.map(|l| l / trace);
    Ok(PcaResult {
        eigenvectors,
        eigenvalues,
        lambda_norm,
        mu,
        sigma,
    })
}
