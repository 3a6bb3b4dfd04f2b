//! Pressure-estimation model families.
//!
//! Every fitted model stores a flat parameter vector. The per-family layout:
//!
//! * `Exponential(k)`: `[α₁..α_k, β₁..β_k, γ, δ]`
//! * `Poly(n, m)` / `PolyAr(p, n, m)`: `α_ij` for every unmasked `(i, j)` in
//!   row-major order (`i` over `0..=n`, then `j` over `0..=m`), followed by the
//!   lag coefficients `[β_{1,1}, β_{1,2}, β_{2,1}, β_{2,2}, ..]` (lag-major).
//! * `Nn(d)` / `NnAr(p, d)`: see [`nn`] for the cascade layout.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, Sample};

pub mod exp;
pub mod nn;
pub mod poly;

pub use exp::{predict_exp, ExpParams};
pub use nn::{NnParams, NnScratch};
pub use poly::{design_matrix_poly, predict_poly, PolyParams, REFERENCE_COEFFS};

/// Version tag written into every model file.
pub const MODEL_FORMAT: &str = "hydrofit-model/1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("exponent {exponent} exceeds the overflow guard")]
    Overflow { exponent: f64 },
    #[error("expected {expected} lagged input pairs, got {got}")]
    MissingLags { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("operation not supported for {0} models")]
    UnsupportedFamily(Family),
    #[error("model file: {0}")]
    Format(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Exponential,
    Poly,
    PolyAr,
    Nn,
    NnAr,
}

impl Family {
    pub fn is_poly(self) -> bool {
        matches!(self, Family::Poly | Family::PolyAr)
    }

    pub fn is_nn(self) -> bool {
        matches!(self, Family::Nn | Family::NnAr)
    }

    pub fn is_autoregressive(self) -> bool {
        matches!(self, Family::PolyAr | Family::NnAr)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Exponential => "exp",
            Family::Poly => "poly",
            Family::PolyAr => "poly-ar",
            Family::Nn => "nn",
            Family::NnAr => "nn-ar",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "exp" | "exponential" => Ok(Family::Exponential),
            "poly" => Ok(Family::Poly),
            "poly-ar" | "poly_ar" | "polyar" => Ok(Family::PolyAr),
            "nn" => Ok(Family::Nn),
            "nn-ar" | "nn_ar" | "nnar" => Ok(Family::NnAr),
            other => Err(ModelError::InvalidSpec(format!("unknown family `{other}`"))),
        }
    }
}

/// Family plus hyperparameters. Fields that do not apply to the family are
/// zero. Construct through the named constructors, which validate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub p: usize,
    #[serde(default)]
    pub d: usize,
    /// Excluded `(i, j)` monomials, polynomial families only.
    #[serde(default)]
    pub term_mask: BTreeSet<(usize, usize)>,
}

impl ModelSpec {
    fn base(family: Family) -> Self {
        Self {
            family,
            k: 0,
            n: 0,
            m: 0,
            p: 0,
            d: 0,
            term_mask: BTreeSet::new(),
        }
    }

    pub fn exponential(k: usize) -> Result<Self, ModelError> {
        Self {
            k,
            ..Self::base(Family::Exponential)
        }
        .validated()
    }

    pub fn poly(n: usize, m: usize) -> Result<Self, ModelError> {
        Self {
            n,
            m,
            ..Self::base(Family::Poly)
        }
        .validated()
    }

    pub fn poly_ar(p: usize, n: usize, m: usize) -> Result<Self, ModelError> {
        Self {
            p,
            n,
            m,
            ..Self::base(Family::PolyAr)
        }
        .validated()
    }

    pub fn nn(d: usize) -> Result<Self, ModelError> {
        Self {
            d,
            ..Self::base(Family::Nn)
        }
        .validated()
    }

    pub fn nn_ar(p: usize, d: usize) -> Result<Self, ModelError> {
        Self {
            p,
            d,
            ..Self::base(Family::NnAr)
        }
        .validated()
    }

    /// Adds excluded monomials (polynomial families only).
    pub fn with_mask<I: IntoIterator<Item = (usize, usize)>>(mut self, terms: I) -> Result<Self, ModelError> {
        self.term_mask.extend(terms);
        self.validated()
    }

    pub fn validated(self) -> Result<Self, ModelError> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidSpec(msg));
        match self.family {
            Family::Exponential if self.k == 0 => return bad("exponential model needs k >= 1".into()),
            Family::Nn | Family::NnAr if self.d == 0 => return bad("network depth d must be >= 1".into()),
            _ => {}
        }
        let unused = match self.family {
            Family::Exponential => self.n + self.m + self.p + self.d,
            Family::Poly => self.k + self.p + self.d,
            Family::PolyAr => self.k + self.d,
            Family::Nn => self.k + self.n + self.m + self.p,
            Family::NnAr => self.k + self.n + self.m,
        };
        if unused != 0 {
            return bad(format!("hyperparameters set that do not apply to {}", self.family));
        }
        if !self.term_mask.is_empty() {
            if !self.family.is_poly() {
                return bad("term masks apply to polynomial families only".into());
            }
            if self.term_mask.contains(&(self.n, self.m)) {
                return bad(format!("cannot mask the highest-degree term ({}, {})", self.n, self.m));
            }
            if let Some(&(i, j)) = self.term_mask.iter().find(|&&(i, j)| i > self.n || j > self.m) {
                return bad(format!("masked term ({i}, {j}) outside degree range"));
            }
        }
        Ok(())
    }

    /// Parameter count ν.
    pub fn count_params(&self) -> usize {
        count_params(self)
    }

    /// Whether the model carries a constant offset term.
    pub fn has_intercept(&self) -> bool {
        match self.family {
            Family::Poly | Family::PolyAr => !self.term_mask.contains(&(0, 0)),
            _ => true,
        }
    }

    /// Predictor count for adjusted R²: ν − 1 with an intercept, ν otherwise.
    pub fn predictor_count(&self) -> usize {
        let nu = self.count_params();
        if self.has_intercept() {
            nu.saturating_sub(1)
        } else {
            nu
        }
    }

    /// Number of leading samples per trajectory without a full lag history.
    pub fn lag_order(&self) -> usize {
        self.p
    }

    /// Unmasked monomials in parameter order.
    pub fn poly_terms(&self) -> Vec<(usize, usize)> {
        (0..=self.n)
            .flat_map(|i| (0..=self.m).map(move |j| (i, j)))
            .filter(|t| !self.term_mask.contains(t))
            .collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Exponential => write!(f, "exp(k={})", self.k)?,
            Family::Poly => write!(f, "poly(n={}, m={})", self.n, self.m)?,
            Family::PolyAr => write!(f, "poly-ar(p={}, n={}, m={})", self.p, self.n, self.m)?,
            Family::Nn => write!(f, "nn(d={})", self.d)?,
            Family::NnAr => write!(f, "nn-ar(p={}, d={})", self.p, self.d)?,
        }
        if !self.term_mask.is_empty() {
            let terms: Vec<String> = self.term_mask.iter().map(|(i, j)| format!("v^{i}vdot^{j}")).collect();
            write!(f, " without {}", terms.join(","))?;
        }
        Ok(())
    }
}

/// ν for a spec: `2k + 2`, `(n+1)(m+1) − |mask| + 2p`, or the cascade count.
pub fn count_params(spec: &ModelSpec) -> usize {
    match spec.family {
        Family::Exponential => 2 * spec.k + 2,
        Family::Poly | Family::PolyAr => (spec.n + 1) * (spec.m + 1) - spec.term_mask.len() + 2 * spec.p,
        Family::Nn | Family::NnAr => nn::param_count(spec.d, spec.p),
    }
}

/// Mean and standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

impl ColumnScale {
    pub const IDENTITY: ColumnScale = ColumnScale { mean: 0.0, std: 1.0 };

    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 0.0 { std } else { 1.0 },
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Input/target scaling used by the network families; identity elsewhere.
/// Lagged inputs reuse the scale of their current-time column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v: ColumnScale,
    pub v_dot: ColumnScale,
    pub p: ColumnScale,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        v: ColumnScale::IDENTITY,
        v_dot: ColumnScale::IDENTITY,
        p: ColumnScale::IDENTITY,
    };

    pub fn fit(ds: &Dataset) -> Self {
        let samples: Vec<&Sample> = ds.samples().collect();
        Self {
            v: ColumnScale::of(samples.iter().map(|s| s.v)),
            v_dot: ColumnScale::of(samples.iter().map(|s| s.v_dot)),
            p: ColumnScale::of(samples.iter().map(|s| s.p)),
        }
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// A spec together with its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    spec: ModelSpec,
    params: Vec<f64>,
    trained_on: String,
    normalization: Normalization,
}

impl FittedModel {
    pub fn new(
        spec: ModelSpec,
        params: Vec<f64>,
        trained_on: impl Into<String>,
        normalization: Normalization,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let nu = spec.count_params();
        if params.len() != nu {
            return Err(ModelError::ShapeMismatch {
                expected: nu,
                got: params.len(),
            });
        }
        Ok(Self {
            spec,
            params,
            trained_on: trained_on.into(),
            normalization,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn nu(&self) -> usize {
        self.params.len()
    }

    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn as_poly(&self) -> Result<PolyParams, ModelError> {
        if !self.spec.family.is_poly() {
            return Err(ModelError::UnsupportedFamily(self.spec.family));
        }
        PolyParams::from_flat(&self.spec, &self.params)
    }

    pub fn as_exp(&self) -> Result<ExpParams, ModelError> {
        if self.spec.family != Family::Exponential {
            return Err(ModelError::UnsupportedFamily(self.spec.family));
        }
        ExpParams::from_flat(self.spec.k, &self.params)
    }

    pub fn as_nn(&self) -> Result<NnParams, ModelError> {
        if !self.spec.family.is_nn() {
            return Err(ModelError::UnsupportedFamily(self.spec.family));
        }
        NnParams::from_flat(self.spec.d, self.spec.p, self.params.clone())
    }

    /// Typed view used for repeated evaluation.
    pub fn predictor(&self) -> Result<Predictor, ModelError> {
        Ok(match self.spec.family {
            Family::Exponential => Predictor::Exp(self.as_exp()?),
            Family::Poly | Family::PolyAr => Predictor::Poly(self.as_poly()?),
            Family::Nn | Family::NnAr => Predictor::Nn(self.as_nn()?, self.normalization),
        })
    }

    /// Prediction in kPa from physical inputs; `lags[k-1]` holds `(v, v̇)`
    /// from `k` samples earlier.
    pub fn predict(&self, v: f64, v_dot: f64, lags: &[(f64, f64)]) -> Result<f64, ModelError> {
        self.predictor()?.predict(v, v_dot, lags)
    }

    /// Measured and predicted pressure for every row with full lag history.
    pub fn evaluate(&self, ds: &Dataset) -> Result<Evaluation, ModelError> {
        self.predictor()?.evaluate(ds, self.spec.lag_order())
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }
}

/// Targets and predictions on the rows a model can score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub t: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl Evaluation {
    pub fn len(&self) -> usize {
        self.measured.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measured.is_empty()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.measured.iter().zip(&self.predicted).map(|(y, f)| y - f).collect()
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Exp(ExpParams),
    Poly(PolyParams),
    Nn(NnParams, Normalization),
}

impl Predictor {
    pub fn predict(&self, v: f64, v_dot: f64, lags: &[(f64, f64)]) -> Result<f64, ModelError> {
        match self {
            Predictor::Exp(e) => predict_exp(e, v, v_dot),
            Predictor::Poly(pp) => predict_poly(pp, v, v_dot, (pp.p > 0).then_some(lags)),
            Predictor::Nn(net, norm) => {
                if lags.len() != net.p() {
                    return Err(ModelError::MissingLags {
                        expected: net.p(),
                        got: lags.len(),
                    });
                }
                let mut x = Vec::with_capacity(net.n_inputs());
                x.push(norm.v.apply(v));
                x.push(norm.v_dot.apply(v_dot));
                for &(lv, lvd) in lags {
                    x.push(norm.v.apply(lv));
                    x.push(norm.v_dot.apply(lvd));
                }
                Ok(norm.p.invert(net.forward(&x)?))
            }
        }
    }

    fn evaluate(&self, ds: &Dataset, p: usize) -> Result<Evaluation, ModelError> {
        let mut out = Evaluation::default();
        let mut lags = Vec::with_capacity(p);
        for traj in ds.trajectories() {
            let s = traj.samples();
            for i in p..s.len() {
                lags.clear();
                lags.extend((1..=p).map(|k| (s[i - k].v, s[i - k].v_dot)));
                out.t.push(s[i].t);
                out.measured.push(s[i].p);
                out.predicted.push(self.predict(s[i].v, s[i].v_dot, &lags)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Hyperparameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    term_mask: Vec<(usize, usize)>,
}

/// On-disk model layout.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    family: Family,
    hyperparameters: Hyperparameters,
    params: Vec<f64>,
    normalization: Normalization,
    nu: usize,
    trained_on: String,
}

impl From<&FittedModel> for ModelFile {
    fn from(m: &FittedModel) -> Self {
        let s = &m.spec;
        let (k, n, mm, p, d) = match s.family {
            Family::Exponential => (Some(s.k), None, None, None, None),
            Family::Poly => (None, Some(s.n), Some(s.m), None, None),
            Family::PolyAr => (None, Some(s.n), Some(s.m), Some(s.p), None),
            Family::Nn => (None, None, None, None, Some(s.d)),
            Family::NnAr => (None, None, None, Some(s.p), Some(s.d)),
        };
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            family: s.family,
            hyperparameters: Hyperparameters {
                k,
                n,
                m: mm,
                p,
                d,
                term_mask: s.term_mask.iter().copied().collect(),
            },
            params: m.params.clone(),
            normalization: m.normalization,
            nu: m.params.len(),
            trained_on: m.trained_on.clone(),
        }
    }
}

impl TryFrom<ModelFile> for FittedModel {
    type Error = ModelError;

    fn try_from(f: ModelFile) -> Result<Self, ModelError> {
        if f.format != MODEL_FORMAT {
            return Err(ModelError::Format(format!(
                "unsupported format `{}` (expected `{MODEL_FORMAT}`)",
                f.format
            )));
        }
        let h = f.hyperparameters;
        let spec = ModelSpec {
            family: f.family,
            k: h.k.unwrap_or(0),
            n: h.n.unwrap_or(0),
            m: h.m.unwrap_or(0),
            p: h.p.unwrap_or(0),
            d: h.d.unwrap_or(0),
            term_mask: h.term_mask.into_iter().collect(),
        }
        .validated()?;
        if f.nu != spec.count_params() {
            return Err(ModelError::Format(format!(
                "nu = {} disagrees with {} (expected {})",
                f.nu,
                spec,
                spec.count_params()
            )));
        }
        FittedModel::new(spec, f.params, f.trained_on, f.normalization)
    }
}
