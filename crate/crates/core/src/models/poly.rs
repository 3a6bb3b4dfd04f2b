use nalgebra::{DMatrix, DVector};

use super::{Family, ModelError, ModelSpec};
use crate::domain::Dataset;

/// Coefficients `α_ij` (row `i` = power of v, column `j` = power of v̇) of the
/// reference (3, 2) actuator model. Used as the simulator's default truth.
pub const REFERENCE_COEFFS: [[f64; 3]; 4] = [
    [0.0, 1.7660e-1, 2.3010e-4],
    [1.2695e-2, -1.3896e-4, -3.0150e-6],
    [-8.0664e-5, 6.6527e-7, 1.3800e-8],
    [4.1269e-7, -7.3542e-10, -1.3773e-11],
];

/// `P = Σ α_ij vⁱ v̇ʲ + Σ_k (β_k1 v(t−kΔt) + β_k2 v̇(t−kΔt))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyParams {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `(i, j)` of each entry of `alpha`, row-major.
    pub terms: Vec<(usize, usize)>,
    pub alpha: Vec<f64>,
    pub beta: Vec<[f64; 2]>,
}

impl PolyParams {
    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self, ModelError> {
        if !spec.family.is_poly() {
            return Err(ModelError::UnsupportedFamily(spec.family));
        }
        let terms = spec.poly_terms();
        let nu = terms.len() + 2 * spec.p;
        if flat.len() != nu {
            return Err(ModelError::ShapeMismatch {
                expected: nu,
                got: flat.len(),
            });
        }
        let (alpha, rest) = flat.split_at(terms.len());
        Ok(Self {
            n: spec.n,
            m: spec.m,
            p: spec.p,
            terms,
            alpha: alpha.to_vec(),
            beta: rest.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        })
    }

    /// Full (unmasked, non-AR) model from a dense coefficient table.
    pub fn from_table<const M: usize>(table: &[[f64; M]]) -> Self {
        assert!(!table.is_empty() && M > 0);
        let n = table.len() - 1;
        let m = M - 1;
        let terms: Vec<(usize, usize)> = (0..=n).flat_map(|i| (0..=m).map(move |j| (i, j))).collect();
        let alpha = terms.iter().map(|&(i, j)| table[i][j]).collect();
        Self {
            n,
            m,
            p: 0,
            terms,
            alpha,
            beta: Vec::new(),
        }
    }

    /// The reference (3, 2) model.
    pub fn reference() -> Self {
        Self::from_table(&REFERENCE_COEFFS)
    }

    pub fn spec(&self) -> ModelSpec {
        let all: Vec<(usize, usize)> = (0..=self.n).flat_map(|i| (0..=self.m).map(move |j| (i, j))).collect();
        let mask = all.into_iter().filter(|t| !self.terms.contains(t));
        let base = if self.p > 0 {
            ModelSpec::poly_ar(self.p, self.n, self.m)
        } else {
            ModelSpec::poly(self.n, self.m)
        };
        base.and_then(|s| s.with_mask(mask))
            .expect("params describe a valid spec")
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.alpha.clone();
        for b in &self.beta {
            out.extend_from_slice(b);
        }
        out
    }

    /// Coefficient of `vⁱ v̇ʲ`, zero if masked or out of range.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.terms
            .iter()
            .position(|&t| t == (i, j))
            .map_or(0.0, |k| self.alpha[k])
    }

    fn powers(x: f64, max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(max + 1);
        let mut acc = 1.0;
        for _ in 0..=max {
            out.push(acc);
            acc *= x;
        }
        out
    }

    /// Monomial part only.
    pub fn eval_static(&self, v: f64, v_dot: f64) -> f64 {
        let vp = Self::powers(v, self.n);
        let wp = Self::powers(v_dot, self.m);
        self.terms
            .iter()
            .zip(&self.alpha)
            .map(|(&(i, j), a)| a * vp[i] * wp[j])
            .sum()
    }

    /// ∂P/∂v at `(v, v̇)`: `Σ i·α_ij v^{i−1} v̇ʲ`.
    pub fn d_dv(&self, v: f64, v_dot: f64) -> f64 {
        let vp = Self::powers(v, self.n);
        let wp = Self::powers(v_dot, self.m);
        self.terms
            .iter()
            .zip(&self.alpha)
            .filter(|((i, _), _)| *i > 0)
            .map(|(&(i, j), a)| i as f64 * a * vp[i - 1] * wp[j])
            .sum()
    }

    /// ∂P/∂v̇ at `(v, v̇)`: `Σ j·α_ij vⁱ v̇^{j−1}`.
    pub fn d_dvdot(&self, v: f64, v_dot: f64) -> f64 {
        let vp = Self::powers(v, self.n);
        let wp = Self::powers(v_dot, self.m);
        self.terms
            .iter()
            .zip(&self.alpha)
            .filter(|((_, j), _)| *j > 0)
            .map(|(&(i, j), a)| j as f64 * a * vp[i] * wp[j - 1])
            .sum()
    }
}

pub fn predict_poly(params: &PolyParams, v: f64, v_dot: f64, lags: Option<&[(f64, f64)]>) -> Result<f64, ModelError> {
    let mut acc = params.eval_static(v, v_dot);
    match (params.p, lags) {
        (0, None) => {}
        (0, Some([])) => {}
        (p, Some(l)) if l.len() == p => {
            for (b, &(lv, lvd)) in params.beta.iter().zip(l) {
                acc += b[0] * lv + b[1] * lvd;
            }
        }
        (p, l) => {
            return Err(ModelError::MissingLags {
                expected: p,
                got: l.map_or(0, <[_]>::len),
            })
        }
    }
    Ok(acc)
}

/// Regression matrix with one column per unmasked monomial followed by the
/// `2p` lag columns. The first `p` samples of each trajectory have no full
/// lag history and are dropped.
pub fn design_matrix_poly(ds: &Dataset, spec: &ModelSpec) -> Result<(DMatrix<f64>, DVector<f64>), ModelError> {
    if !matches!(spec.family, Family::Poly | Family::PolyAr) {
        return Err(ModelError::UnsupportedFamily(spec.family));
    }
    let terms = spec.poly_terms();
    let p = spec.p;
    let ncols = terms.len() + 2 * p;
    let nrows: usize = ds.trajectories().iter().map(|t| t.len().saturating_sub(p)).sum();
    let mut x = DMatrix::<f64>::zeros(nrows, ncols);
    let mut y = DVector::<f64>::zeros(nrows);
    let mut row = 0;
    for traj in ds.trajectories() {
        let s = traj.samples();
        for i in p..s.len() {
            let vp = PolyParams::powers(s[i].v, spec.n);
            let wp = PolyParams::powers(s[i].v_dot, spec.m);
            for (c, &(a, b)) in terms.iter().enumerate() {
                x[(row, c)] = vp[a] * wp[b];
            }
            for k in 1..=p {
                let c = terms.len() + 2 * (k - 1);
                x[(row, c)] = s[i - k].v;
                x[(row, c + 1)] = s[i - k].v_dot;
            }
            y[row] = s[i].p;
            row += 1;
        }
    }
    Ok((x, y))
}
