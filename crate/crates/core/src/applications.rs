//! Analyses built on fitted models: pointwise stiffness and damping, the
//! Chow test for whether two actuators share one model, and external-force
//! estimation from pressure residuals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::dataset::PHASE_BAND;
use crate::domain::{Dataset, Phase, Sample, Trajectory};
use crate::fitting::{fit_linear, FitError};
use crate::models::{design_matrix_poly, FittedModel, ModelError, ModelSpec, PolyParams, Predictor};

/// Effective area of one chamber, mm².
pub const DEFAULT_CHAMBER_AREA: f64 = 22.0;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("stream lengths differ: {0:?}")]
    LengthMismatch(Vec<usize>),
    #[error("significance level must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("not enough rows for the Chow test: {n} rows, {nu} parameters per group")]
    TooFewSamples { n: usize, nu: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseSd {
    pub v: f64,
    pub v_dot: f64,
    pub k: f64,
    pub c: f64,
}

/// Per-phase means are `None` when no sample falls in that phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiffnessDampingReport {
    pub k_bar: f64,
    pub c_bar: f64,
    pub k_bar_inflation: Option<f64>,
    pub k_bar_deflation: Option<f64>,
    pub c_bar_inflation: Option<f64>,
    pub c_bar_deflation: Option<f64>,
    pub pointwise: Vec<PointwiseSd>,
}

fn sample_phase(traj: &Trajectory, s: &Sample) -> Phase {
    match traj.phase() {
        Phase::Mixed if s.v_dot > PHASE_BAND => Phase::Inflation,
        Phase::Mixed if s.v_dot < -PHASE_BAND => Phase::Deflation,
        p => p,
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// `kᵢ = ∂P/∂v` and `cᵢ = ∂P/∂v̇` of the polynomial part at every sample.
/// Trajectories labelled mixed are split per sample by the sign of v̇
/// outside the dwell band.
pub fn stiffness_damping(model: &FittedModel, ds: &Dataset) -> Result<StiffnessDampingReport, AppError> {
    let pp = model.as_poly()?;
    let mut pointwise = Vec::with_capacity(ds.n_samples());
    let mut phases = Vec::with_capacity(ds.n_samples());
    for traj in ds.trajectories() {
        for s in traj.samples() {
            pointwise.push(PointwiseSd {
                v: s.v,
                v_dot: s.v_dot,
                k: pp.d_dv(s.v, s.v_dot),
                c: pp.d_dvdot(s.v, s.v_dot),
            });
            phases.push(sample_phase(traj, s));
        }
    }
    let of = |phase: Phase, f: fn(&PointwiseSd) -> f64| {
        mean(
            pointwise
                .iter()
                .zip(&phases)
                .filter(|(_, p)| **p == phase)
                .map(|(x, _)| f(x)),
        )
    };
    Ok(StiffnessDampingReport {
        k_bar: mean(pointwise.iter().map(|x| x.k)).unwrap_or(0.0),
        c_bar: mean(pointwise.iter().map(|x| x.c)).unwrap_or(0.0),
        k_bar_inflation: of(Phase::Inflation, |x| x.k),
        k_bar_deflation: of(Phase::Deflation, |x| x.k),
        c_bar_inflation: of(Phase::Inflation, |x| x.c),
        c_bar_deflation: of(Phase::Deflation, |x| x.c),
        pointwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChowReport {
    pub f_stat: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_value: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub ssr_pooled: f64,
    pub ssr_1: f64,
    pub ssr_2: f64,
}

fn ssr_of(ds: &Dataset, spec: &ModelSpec) -> Result<(f64, usize), AppError> {
    let (x, y) = design_matrix_poly(ds, spec)?;
    let theta = fit_linear(&x, &y)?;
    let rows = x.nrows();
    Ok(((y - x * theta).norm_squared(), rows))
}

/// `F = [(SSR_p − SSR₁ − SSR₂)/ν] / [(SSR₁ + SSR₂)/(N₁ + N₂ − 2ν)]`.
///
/// The pair is put in a canonical order (by fingerprint) first, so the
/// statistic does not depend on argument order.
pub fn chow_test(ds1: &Dataset, ds2: &Dataset, spec: &ModelSpec, alpha: f64) -> Result<ChowReport, AppError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AppError::BadAlpha(alpha));
    }
    if !spec.family.is_poly() {
        return Err(ModelError::UnsupportedFamily(spec.family).into());
    }
    let (a, b) = if ds1.fingerprint() <= ds2.fingerprint() {
        (ds1, ds2)
    } else {
        (ds2, ds1)
    };
    let nu = spec.count_params();
    let (s1, n1) = ssr_of(a, spec)?;
    let (s2, n2) = ssr_of(b, spec)?;
    if n1 + n2 <= 2 * nu {
        return Err(AppError::TooFewSamples { n: n1 + n2, nu });
    }
    let (sp, _) = ssr_of(&a.concat(b), spec)?;
    let df1 = nu;
    let df2 = n1 + n2 - 2 * nu;
    let split = s1 + s2;
    let f_stat = if split > 0.0 {
        (((sp - split) / df1 as f64) / (split / df2 as f64)).max(0.0)
    } else if sp > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| ModelError::InvalidSpec(e.to_string()))?;
    let critical_value = dist.inverse_cdf(1.0 - alpha);
    let p_value = if f_stat.is_finite() { dist.sf(f_stat) } else { 0.0 };
    Ok(ChowReport {
        f_stat,
        df1,
        df2,
        p_value,
        critical_value,
        alpha,
        reject: f_stat > critical_value,
        ssr_pooled: sp,
        ssr_1: s1,
        ssr_2: s2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceEstimate {
    pub t: f64,
    /// Measured minus predicted pressure per chamber, kPa.
    pub per_chamber_residual: [f64; 3],
    /// `Σ residualᵢ · areaᵢ` in mN (kPa·mm²).
    pub force: f64,
    /// `|force|`: the direction is not observable from pressure alone.
    pub magnitude: f64,
}

/// Force from the residuals of three load-free chamber models. Rows before
/// the longest lag history are skipped.
pub fn estimate_force(
    models: &[FittedModel; 3],
    streams: &[Trajectory; 3],
    areas: [f64; 3],
) -> Result<Vec<ForceEstimate>, AppError> {
    let lens: Vec<usize> = streams.iter().map(Trajectory::len).collect();
    if lens.iter().any(|l| *l != lens[0]) {
        return Err(AppError::LengthMismatch(lens));
    }
    let predictors: Vec<Predictor> = models.iter().map(FittedModel::predictor).collect::<Result<_, _>>()?;
    let lag = models.iter().map(|m| m.spec().lag_order()).max().unwrap_or(0);
    let mut out = Vec::with_capacity(lens[0].saturating_sub(lag));
    let mut lags: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 3];
    for i in lag..lens[0] {
        let mut resid = [0.0; 3];
        for c in 0..3 {
            let s = streams[c].samples();
            let p = models[c].spec().lag_order();
            lags[c].clear();
            lags[c].extend((1..=p).map(|k| (s[i - k].v, s[i - k].v_dot)));
            resid[c] = s[i].p - predictors[c].predict(s[i].v, s[i].v_dot, &lags[c])?;
        }
        let force: f64 = resid.iter().zip(&areas).map(|(r, a)| r * a).sum();
        out.push(ForceEstimate {
            t: streams[0].samples()[i].t,
            per_chamber_residual: resid,
            force,
            magnitude: force.abs(),
        });
    }
    Ok(out)
}

/// `P = C(v, v̇)·v̇ + K(v)` for a polynomial model: `k[i]` multiplies `vⁱ` and
/// `c[i][j]` multiplies `vⁱ v̇ʲ` inside `C`. Lag terms are not part of
/// either table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EomDecomposition {
    pub k: Vec<f64>,
    pub c: Vec<Vec<f64>>,
}

impl EomDecomposition {
    pub fn k_at(&self, v: f64) -> f64 {
        self.k.iter().rev().fold(0.0, |acc, a| acc * v + a)
    }

    pub fn c_at(&self, v: f64, v_dot: f64) -> f64 {
        let mut vp = 1.0;
        let mut total = 0.0;
        for row in &self.c {
            total += vp * row.iter().rev().fold(0.0, |acc, a| acc * v_dot + a);
            vp *= v;
        }
        total
    }

    pub fn reconstruct(&self, v: f64, v_dot: f64) -> f64 {
        self.c_at(v, v_dot) * v_dot + self.k_at(v)
    }
}

pub fn decompose_eom(model: &FittedModel) -> Result<EomDecomposition, AppError> {
    let pp: PolyParams = model.as_poly()?;
    let k = (0..=pp.n).map(|i| pp.coeff(i, 0)).collect();
    let c = (0..=pp.n)
        .map(|i| (1..=pp.m).map(|j| pp.coeff(i, j)).collect())
        .collect();
    Ok(EomDecomposition { k, c })
}
