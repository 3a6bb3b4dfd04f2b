//! Fit-quality metrics, the weighted joint cost, and grid search over
//! hyperparameters.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Dataset;
use crate::fitting::{fit, leading_term_scaled, FitConfig, FitError};
use crate::models::{Family, FittedModel, ModelError, ModelSpec};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("need more than {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("weights must be non-negative with at least one positive")]
    BadWeights,
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// AICc or BIC. A perfect fit drives the log-likelihood to +∞, which is kept
/// as an explicit marker instead of a float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoCriterion {
    Finite(f64),
    NegInfinite,
}

impl InfoCriterion {
    pub fn value(self) -> f64 {
        match self {
            InfoCriterion::Finite(x) => x,
            InfoCriterion::NegInfinite => f64::NEG_INFINITY,
        }
    }
}

impl fmt::Display for InfoCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InfoCriterion::Finite(x) => write!(f, "{x:.4}"),
            InfoCriterion::NegInfinite => f.write_str("-inf"),
        }
    }
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<(), SelectionError> {
    if y.len() != yhat.len() {
        return Err(SelectionError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(SelectionError::TooFewSamples { need: 0, got: 0 });
    }
    Ok(())
}

fn ssr(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, SelectionError> {
    check_lengths(y, yhat)?;
    Ok((ssr(y, yhat) / y.len() as f64).sqrt())
}

/// `1 − (SSR/SST)·(N−1)/(N−k−1)` with `k` predictors.
pub fn r2_adj(y: &[f64], yhat: &[f64], k: usize) -> Result<f64, SelectionError> {
    check_lengths(y, yhat)?;
    let n = y.len();
    if n <= k + 1 {
        return Err(SelectionError::TooFewSamples { need: k + 1, got: n });
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst <= 0.0 {
        return Err(SelectionError::DegenerateTarget);
    }
    Ok(1.0 - (ssr(y, yhat) / sst) * ((n - 1) as f64 / (n - k - 1) as f64))
}

/// Gaussian log-likelihood at the maximum-likelihood noise variance.
pub fn log_likelihood(n: usize, ssr: f64) -> f64 {
    let n = n as f64;
    -(n / 2.0) * ((2.0 * PI * ssr / n).ln() + 1.0)
}

fn criterion_guard(n: usize, nu: usize, ssr: f64) -> Result<Option<InfoCriterion>, SelectionError> {
    if n <= nu + 1 {
        return Err(SelectionError::TooFewSamples { need: nu + 1, got: n });
    }
    Ok((ssr <= 0.0).then_some(InfoCriterion::NegInfinite))
}

pub fn aicc_from_ssr(n: usize, ssr: f64, nu: usize) -> Result<InfoCriterion, SelectionError> {
    if let Some(marker) = criterion_guard(n, nu, ssr)? {
        return Ok(marker);
    }
    let (nf, v) = (n as f64, nu as f64);
    let aic = 2.0 * v - 2.0 * log_likelihood(n, ssr);
    Ok(InfoCriterion::Finite(aic + 2.0 * v * (v + 1.0) / (nf - v - 1.0)))
}

pub fn bic_from_ssr(n: usize, ssr: f64, nu: usize) -> Result<InfoCriterion, SelectionError> {
    if let Some(marker) = criterion_guard(n, nu, ssr)? {
        return Ok(marker);
    }
    Ok(InfoCriterion::Finite(
        nu as f64 * (n as f64).ln() - 2.0 * log_likelihood(n, ssr),
    ))
}

pub fn aicc(y: &[f64], yhat: &[f64], nu: usize) -> Result<InfoCriterion, SelectionError> {
    check_lengths(y, yhat)?;
    aicc_from_ssr(y.len(), ssr(y, yhat), nu)
}

pub fn bic(y: &[f64], yhat: &[f64], nu: usize) -> Result<InfoCriterion, SelectionError> {
    check_lengths(y, yhat)?;
    bic_from_ssr(y.len(), ssr(y, yhat), nu)
}

/// `∂AICc/∂ν = 2 + [(4ν+2)(N−ν−1) + 2ν(ν+1)] / (N−ν−1)²`.
pub fn aicc_sensitivity(n: usize, nu: usize) -> f64 {
    let (n, v) = (n as f64, nu as f64);
    let r = n - v - 1.0;
    2.0 + ((4.0 * v + 2.0) * r + 2.0 * v * (v + 1.0)) / (r * r)
}

/// `∂BIC/∂ν = ln N`.
pub fn bic_sensitivity(n: usize) -> f64 {
    (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for Weights {
    /// Scales AICc (typically 1e4 to 1e5) down to the RMSE range.
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1e-5,
        }
    }
}

impl Weights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self, SelectionError> {
        let w = Self { w1, w2, w3 };
        let ok = [w1, w2, w3].iter().all(|x| *x >= 0.0 && x.is_finite()) && (w1 > 0.0 || w2 > 0.0 || w3 > 0.0);
        if ok {
            Ok(w)
        } else {
            Err(SelectionError::BadWeights)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostClass {
    Lsq,
    LmLsq,
    Sgd,
}

/// Asymptotic cost of one fit: `N·ν²` for least squares (per iteration for
/// LM), `epochs·N·ν` for gradient training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostDescriptor {
    pub class: CostClass,
    pub n: usize,
    pub nu: usize,
    pub epochs: Option<usize>,
    pub cost: f64,
}

pub fn flops_estimate(spec: &ModelSpec, n: usize, epochs: usize) -> CostDescriptor {
    let nu = spec.count_params();
    let (class, epochs) = match spec.family {
        Family::Poly | Family::PolyAr => (CostClass::Lsq, None),
        Family::Exponential => (CostClass::LmLsq, None),
        Family::Nn | Family::NnAr => (CostClass::Sgd, Some(epochs)),
    };
    let cost = match epochs {
        Some(e) => e as f64 * n as f64 * nu as f64,
        None => n as f64 * (nu * nu) as f64,
    };
    CostDescriptor {
        class,
        n,
        nu,
        epochs,
        cost,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub spec: ModelSpec,
    pub nu: usize,
    /// Rows scored (lagged models lose the first `p` of each trajectory).
    pub n: usize,
    /// Predictor count used in the adjusted R².
    pub k: usize,
    pub rmse: f64,
    pub r2_adj: f64,
    pub aicc: InfoCriterion,
    pub bic: InfoCriterion,
    pub daicc_dnu: f64,
    pub dbic_dnu: f64,
    /// Highest-degree polynomial coefficient times its column's max-abs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leading_coeff: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("spec", self.spec.to_string()),
            ("nu", self.nu.to_string()),
            ("N", self.n.to_string()),
            ("RMSE [kPa]", format!("{:.6}", self.rmse)),
            ("R2_adj", format!("{:.6}", self.r2_adj)),
            ("AICc", self.aicc.to_string()),
            ("BIC", self.bic.to_string()),
            ("dAICc/dnu", format!("{:.6}", self.daicc_dnu)),
            ("dBIC/dnu", format!("{:.6}", self.dbic_dnu)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<12} {v:>16}");
        }
        if let Some(l) = self.leading_coeff {
            let _ = writeln!(out, "{:<12} {:>16}", "leading", format!("{l:.3e}"));
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// `w1·RMSE + w2·(1 − R²_adj) + w3·AICc`; a zero weight drops its term.
pub fn joint_cost(report: &FitReport, w: &Weights) -> f64 {
    let mut cost = 0.0;
    if w.w1 != 0.0 {
        cost += w.w1 * report.rmse;
    }
    if w.w2 != 0.0 {
        cost += w.w2 * (1.0 - report.r2_adj);
    }
    if w.w3 != 0.0 {
        cost += w.w3 * report.aicc.value();
    }
    cost
}

/// In-sample metrics of `model` on `ds`.
pub fn evaluate(model: &FittedModel, ds: &Dataset) -> Result<FitReport, SelectionError> {
    let ev = model.evaluate(ds)?;
    let nu = model.nu();
    let k = model.spec().predictor_count();
    let n = ev.len();
    let s = ssr(&ev.measured, &ev.predicted);
    let leading_coeff = leading_term_scaled(model, ds)?;
    let mut warnings = Vec::new();
    if let Some(l) = leading_coeff {
        if l <= crate::fitting::LEADING_TERM_FLOOR {
            warnings.push(format!("highest-degree coefficient is effectively zero ({l:.3e})"));
        }
    }
    Ok(FitReport {
        spec: model.spec().clone(),
        nu,
        n,
        k,
        rmse: rmse(&ev.measured, &ev.predicted)?,
        r2_adj: r2_adj(&ev.measured, &ev.predicted, k)?,
        aicc: aicc_from_ssr(n, s, nu)?,
        bic: bic_from_ssr(n, s, nu)?,
        daicc_dnu: aicc_sensitivity(n, nu),
        dbic_dnu: bic_sensitivity(n),
        leading_coeff,
        warnings,
    })
}

/// Candidate values per hyperparameter; only those used by the family are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub k: Vec<usize>,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub p: Vec<usize>,
    pub d: Vec<usize>,
}

impl Default for HyperRanges {
    fn default() -> Self {
        Self {
            k: (1..=5).collect(),
            n: (1..=7).collect(),
            m: (1..=7).collect(),
            p: (1..=5).collect(),
            d: (1..=8).collect(),
        }
    }
}

impl HyperRanges {
    /// Every spec of `family` in the grid, in lexicographic order.
    pub fn specs(&self, family: Family) -> Result<Vec<ModelSpec>, SelectionError> {
        let mut out = Vec::new();
        match family {
            Family::Exponential => {
                for &k in &self.k {
                    out.push(ModelSpec::exponential(k)?);
                }
            }
            Family::Poly => {
                for &n in &self.n {
                    for &m in &self.m {
                        out.push(ModelSpec::poly(n, m)?);
                    }
                }
            }
            Family::PolyAr => {
                for &p in &self.p {
                    for &n in &self.n {
                        for &m in &self.m {
                            out.push(ModelSpec::poly_ar(p, n, m)?);
                        }
                    }
                }
            }
            Family::Nn => {
                for &d in &self.d {
                    out.push(ModelSpec::nn(d)?);
                }
            }
            Family::NnAr => {
                for &p in &self.p {
                    for &d in &self.d {
                        out.push(ModelSpec::nn_ar(p, d)?);
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(SelectionError::EmptyGrid);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FitReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub entries: Vec<GridEntry>,
    /// Index of the lowest joint cost; `None` only if every fit failed.
    pub best: Option<usize>,
    pub weights: Weights,
}

fn rank(a: &GridEntry, b: &GridEntry) -> Ordering {
    let ca = a.joint_cost.unwrap_or(f64::INFINITY);
    let cb = b.joint_cost.unwrap_or(f64::INFINITY);
    ca.total_cmp(&cb)
        .then_with(|| a.spec.count_params().cmp(&b.spec.count_params()))
        .then_with(|| a.spec.cmp(&b.spec))
}

impl GridResult {
    pub fn best_entry(&self) -> Option<&GridEntry> {
        self.best.map(|i| &self.entries[i])
    }

    /// Entries ordered by joint cost, failures last.
    pub fn ranked(&self) -> Vec<&GridEntry> {
        let mut v: Vec<&GridEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| rank(a, b));
        v
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:>5} {:>12} {:>10} {:>14} {:>14} {:>12}",
            "model", "nu", "RMSE", "R2_adj", "AICc", "BIC", "cost"
        );
        for (i, e) in self.ranked().into_iter().enumerate() {
            let mark = if i == 0 && self.best.is_some() { "*" } else { "" };
            let name = format!("{}{mark}", e.spec);
            match (&e.report, e.joint_cost) {
                (Some(r), Some(c)) => {
                    let _ = writeln!(
                        out,
                        "{name:<22} {:>5} {:>12.4} {:>10.4} {:>14} {:>14} {:>12.4}",
                        r.nu,
                        r.rmse,
                        r.r2_adj,
                        r.aicc.to_string(),
                        r.bic.to_string(),
                        c
                    );
                }
                _ => {
                    let _ = writeln!(
                        out,
                        "{name:<22} {:>5} failed: {}",
                        e.spec.count_params(),
                        e.error.as_deref().unwrap_or("unknown")
                    );
                }
            }
        }
        out
    }
}

fn score_one(spec: &ModelSpec, fit_ds: &Dataset, score_ds: &Dataset, cfg: &FitConfig) -> Result<FitReport, String> {
    let (model, warning) = match fit(fit_ds, spec, cfg) {
        Ok(m) => (m, None),
        Err(FitError::NoConvergence { best, cost }) => (*best, Some(format!("LM did not converge (ssr {cost:.6e})"))),
        Err(e) => return Err(e.to_string()),
    };
    let mut report = evaluate(&model, score_ds).map_err(|e| e.to_string())?;
    report.warnings.extend(warning);
    Ok(report)
}

/// Fits every spec on `fit_ds` and scores it on `score_ds`.
pub fn grid_search_with(
    fit_ds: &Dataset,
    score_ds: &Dataset,
    family: Family,
    ranges: &HyperRanges,
    w: &Weights,
    cfg: &FitConfig,
) -> Result<GridResult, SelectionError> {
    Weights::new(w.w1, w.w2, w.w3)?;
    let specs = ranges.specs(family)?;
    let entries: Vec<GridEntry> = specs
        .into_par_iter()
        .map(|spec| match score_one(&spec, fit_ds, score_ds, cfg) {
            Ok(report) => {
                let cost = joint_cost(&report, w);
                GridEntry {
                    spec,
                    report: Some(report),
                    joint_cost: Some(cost),
                    error: None,
                }
            }
            Err(e) => GridEntry {
                spec,
                report: None,
                joint_cost: None,
                error: Some(e),
            },
        })
        .collect();
    let best = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.joint_cost.is_some_and(|c| !c.is_nan()))
        .min_by(|(_, a), (_, b)| rank(a, b))
        .map(|(i, _)| i);
    Ok(GridResult {
        entries,
        best,
        weights: *w,
    })
}

/// In-sample grid search: fit and score on the same data.
pub fn grid_search(
    ds: &Dataset,
    family: Family,
    ranges: &HyperRanges,
    w: &Weights,
    cfg: &FitConfig,
) -> Result<GridResult, SelectionError> {
    grid_search_with(ds, ds, family, ranges, w, cfg)
}
