//! Parameter estimation for every model family.
//!
//! * polynomial families: column-scaled QR least squares,
//! * exponential: Levenberg–Marquardt over the exponents only, with the
//!   linear coefficients eliminated at every step (variable projection),
//! * networks: mini-batch Adam with early stopping on held-out trajectories.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{split, DatasetError};
use crate::domain::Dataset;
use crate::models::nn::param_count;
use crate::models::{
    design_matrix_poly, ExpParams, Family, FittedModel, ModelError, ModelSpec, NnParams, NnScratch, Normalization,
};

/// Largest accepted condition number of the column-scaled design.
pub const MAX_CONDITION: f64 = 1e12;
/// Leading polynomial coefficients below this (after column scaling) are flagged.
pub const LEADING_TERM_FLOOR: f64 = 1e-15;
/// Exponent seeds before rescaling by `550 / v_max`.
pub const BETA_GRID: [f64; 8] = [0.002, 0.005, 0.01, 0.02, -0.002, -0.005, -0.01, -0.02];
/// Fraction of trajectories held out for early stopping.
pub const NN_VALIDATION_FRACTION: f64 = 0.1;

const VARPRO_RCOND: f64 = 1e-10;
const EXP_GUARD: f64 = crate::models::exp::EXP_GUARD;

/// Optimizer settings. The network defaults (Adam, learning rate, batch size)
/// are our own choices; only the epoch budget has an outside reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lm_max_iter: usize,
    pub lm_lambda0: f64,
    /// Relative cost change that ends an LM run.
    pub lm_tol: f64,
    /// Zero is allowed and returns the initialized network.
    pub nn_epochs: usize,
    pub nn_lr: f64,
    pub nn_batch: usize,
    pub seed: u64,
    pub multistart: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lm_max_iter: 200,
            lm_lambda0: 1e-3,
            lm_tol: 1e-10,
            nn_epochs: 3000,
            nn_lr: 1e-3,
            nn_batch: 256,
            seed: 0,
            multistart: 8,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |what: &str| Err(FitError::Config(format!("{what} must be positive")));
        if self.lm_max_iter == 0 {
            return bad("lm_max_iter");
        }
        if !(self.lm_lambda0 > 0.0 && self.lm_lambda0.is_finite()) {
            return bad("lm_lambda0");
        }
        if !(self.lm_tol > 0.0 && self.lm_tol.is_finite()) {
            return bad("lm_tol");
        }
        if !(self.nn_lr > 0.0 && self.nn_lr.is_finite()) {
            return bad("nn_lr");
        }
        if self.nn_batch == 0 {
            return bad("nn_batch");
        }
        if self.multistart == 0 {
            return bad("multistart");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("design matrix is rank deficient (condition number {cond:.3e})")]
    RankDeficient { cond: f64 },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("no LM restart converged within the iteration budget (best cost {cost:.6e})")]
    NoConvergence { best: Box<FittedModel>, cost: f64 },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid fit configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Orthonormal basis of the column space of a column-scaled matrix, plus the
/// map from basis coordinates back to unscaled coefficients.
struct Decomposition {
    basis: DMatrix<f64>,
    to_coef: DMatrix<f64>,
    cond: f64,
}

impl Decomposition {
    /// Keeps singular directions above `rcond · σ_max`; `rcond = 0` keeps all.
    fn new(x: &DMatrix<f64>, rcond: f64) -> Self {
        let q = x.ncols();
        let scale: Vec<f64> = (0..q)
            .map(|j| x.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        let mut xs = x.clone();
        for (j, s) in scale.iter().enumerate() {
            if *s > 0.0 {
                xs.column_mut(j).scale_mut(1.0 / s);
            }
        }
        let qr = xs.qr();
        let (qm, r) = (qr.q(), qr.r());
        let svd = r.svd(true, true);
        let u_r = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let sv = &svd.singular_values;
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > rcond * smax && sv[i] > 0.0).collect();
        let u_keep = u_r.select_columns(&keep);
        let basis = &qm * &u_keep;
        let mut to_coef = DMatrix::zeros(q, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            for j in 0..q {
                let s = if scale[j] > 0.0 { scale[j] } else { 1.0 };
                to_coef[(j, c)] = v_t[(i, j)] / sv[i] / s;
            }
        }
        Self { basis, to_coef, cond }
    }

    fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.to_coef * self.basis.tr_mul(y)
    }

    /// `z` minus its projection onto the column space.
    fn project_out(&self, z: &DVector<f64>) -> DVector<f64> {
        z - &self.basis * self.basis.tr_mul(z)
    }
}

/// Least-squares solution of `Xθ ≈ y` via QR on max-abs scaled columns.
pub fn fit_linear(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>, FitError> {
    let (n, nu) = x.shape();
    if y.len() != n {
        return Err(ModelError::ShapeMismatch {
            expected: n,
            got: y.len(),
        }
        .into());
    }
    if n < nu || nu == 0 {
        return Err(FitError::TooFewSamples {
            need: nu.max(1),
            got: n,
        });
    }
    let dec = Decomposition::new(x, 0.0);
    if dec.cond.is_nan() || dec.cond > MAX_CONDITION {
        return Err(FitError::RankDeficient { cond: dec.cond });
    }
    let mut theta = dec.solve(y);
    // one round of refinement against the unscaled residual
    let r = y - x * &theta;
    theta += dec.solve(&r);
    Ok(theta)
}

/// Linear least squares on the polynomial design.
pub fn fit_poly(ds: &Dataset, spec: &ModelSpec) -> Result<FittedModel, FitError> {
    if !spec.family.is_poly() {
        return Err(ModelError::UnsupportedFamily(spec.family).into());
    }
    spec.validate()?;
    let (x, y) = design_matrix_poly(ds, spec)?;
    let theta = fit_linear(&x, &y)?;
    let model = FittedModel::new(
        spec.clone(),
        theta.as_slice().to_vec(),
        ds.fingerprint(),
        Normalization::IDENTITY,
    )?;
    if let Some(lead) = leading_term_scaled(&model, ds)? {
        if lead <= LEADING_TERM_FLOOR {
            warn!(
                "highest-degree coefficient of {} is effectively zero ({lead:.3e} after scaling)",
                model.spec()
            );
        }
    }
    Ok(model)
}

/// `|α_nm| · max|vⁿ v̇ᵐ|` for polynomial models, `None` otherwise.
pub fn leading_term_scaled(model: &FittedModel, ds: &Dataset) -> Result<Option<f64>, FitError> {
    if !model.spec().family.is_poly() {
        return Ok(None);
    }
    let pp = model.as_poly()?;
    let (n, m) = (pp.n as i32, pp.m as i32);
    let col_max = ds
        .samples()
        .map(|s| (s.v.powi(n) * s.v_dot.powi(m)).abs())
        .fold(0.0f64, f64::max);
    Ok(Some(pp.coeff(pp.n, pp.m).abs() * col_max))
}

/// Per-fit diagnostics from one LM run.
#[derive(Debug, Clone)]
pub struct ExpFit {
    pub model: FittedModel,
    /// Sum of squared residuals.
    pub ssr: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct ExpProblem {
    u: Vec<f64>,
    v_dot: Vec<f64>,
    y: DVector<f64>,
    v_scale: f64,
}

struct VpState {
    beta: Vec<f64>,
    coef: DVector<f64>,
    resid: DVector<f64>,
    dec: Decomposition,
    ssr: f64,
}

impl ExpProblem {
    fn new(ds: &Dataset) -> Self {
        let v_scale = ds.samples().map(|s| s.v.abs()).fold(0.0f64, f64::max);
        let v_scale = if v_scale > 0.0 { v_scale } else { 1.0 };
        Self {
            u: ds.samples().map(|s| s.v / v_scale).collect(),
            v_dot: ds.samples().map(|s| s.v_dot).collect(),
            y: DVector::from_iterator(ds.n_samples(), ds.samples().map(|s| s.p)),
            v_scale,
        }
    }

    fn u_max(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Linear coefficients and residual for fixed scaled exponents.
    fn eval(&self, beta: &[f64]) -> Option<VpState> {
        let umax = self.u_max();
        if beta.iter().any(|b| !b.is_finite() || (b * umax).abs() > EXP_GUARD) {
            return None;
        }
        let k = beta.len();
        let n = self.u.len();
        let mut phi = DMatrix::zeros(n, k + 2);
        for (i, (&u, &vd)) in self.u.iter().zip(&self.v_dot).enumerate() {
            for (j, b) in beta.iter().enumerate() {
                phi[(i, j)] = (b * u).exp();
            }
            phi[(i, k)] = vd;
            phi[(i, k + 1)] = 1.0;
        }
        let dec = Decomposition::new(&phi, VARPRO_RCOND);
        let coef = dec.solve(&self.y);
        let resid = &self.y - &phi * &coef;
        let ssr = resid.norm_squared();
        ssr.is_finite().then_some(VpState {
            beta: beta.to_vec(),
            coef,
            resid,
            dec,
            ssr,
        })
    }

    /// Reduced Jacobian of the residual with respect to the exponents.
    fn jacobian(&self, st: &VpState) -> DMatrix<f64> {
        let k = st.beta.len();
        let n = self.u.len();
        let mut jac = DMatrix::zeros(n, k);
        for j in 0..k {
            let (a, b) = (st.coef[j], st.beta[j]);
            let d = DVector::from_iterator(n, self.u.iter().map(|&u| a * u * (b * u).exp()));
            jac.set_column(j, &(-st.dec.project_out(&d)));
        }
        jac
    }

    fn to_params(&self, st: &VpState) -> ExpParams {
        let k = st.beta.len();
        ExpParams {
            alpha: st.coef.iter().take(k).copied().collect(),
            beta: st.beta.iter().map(|b| b / self.v_scale).collect(),
            gamma: st.coef[k],
            delta: st.coef[k + 1],
        }
    }

    /// Levenberg–Marquardt from one exponent seed.
    fn levenberg_marquardt(&self, beta0: &[f64], cfg: &FitConfig) -> Option<(VpState, bool, usize)> {
        let mut st = self.eval(beta0)?;
        let mut lambda = cfg.lm_lambda0;
        let floor = 1e-300f64;
        let y_scale = self.y.norm_squared().max(floor);
        for iter in 0..cfg.lm_max_iter {
            if st.ssr <= 1e-28 * y_scale {
                return Some((st, true, iter));
            }
            let jac = self.jacobian(&st);
            let jtj = jac.tr_mul(&jac);
            let grad = jac.tr_mul(&st.resid);
            if grad.amax() <= 1e-15 * st.ssr.sqrt() * jtj.diagonal().amax().sqrt() {
                return Some((st, true, iter));
            }
            let dmax = jtj.diagonal().amax().max(floor);
            let mut accepted = false;
            while lambda < 1e20 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * a[(i, i)].max(1e-12 * dmax);
                }
                let step = a.cholesky().map(|c| c.solve(&(-&grad)));
                let trial = step.and_then(|s| {
                    let beta: Vec<f64> = st.beta.iter().zip(s.iter()).map(|(b, d)| b + d).collect();
                    self.eval(&beta)
                });
                match trial {
                    Some(t) if t.ssr < st.ssr => {
                        let rel = (st.ssr - t.ssr) / st.ssr.max(floor);
                        st = t;
                        lambda = (lambda / 10.0).max(1e-15);
                        accepted = true;
                        if rel <= cfg.lm_tol {
                            return Some((st, true, iter + 1));
                        }
                        break;
                    }
                    _ => lambda *= 10.0,
                }
            }
            if !accepted {
                // no descent direction left: stationary point
                return Some((st, true, iter));
            }
        }
        Some((st, false, cfg.lm_max_iter))
    }
}

fn exp_seeds(k: usize, v_scale: f64, v_max: f64, cfg: &FitConfig, warm: Option<&[f64]>) -> Vec<Vec<f64>> {
    let factor = 550.0 / v_max.max(f64::MIN_POSITIVE);
    let grid: Vec<f64> = BETA_GRID.iter().map(|b| b * factor * v_scale).collect();
    let mut seeds = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in 0..cfg.multistart {
        let mut s: Vec<f64> = if k == 1 {
            vec![grid[r % grid.len()]]
        } else if r == 0 && k <= 4 {
            grid[..k].to_vec()
        } else {
            grid.choose_multiple(&mut rng, k.min(grid.len())).copied().collect()
        };
        while s.len() < k {
            // more terms than grid points: spread the remainder
            let extra = grid[s.len() % grid.len()] * (1.0 + 0.37 * (s.len() / grid.len()) as f64);
            s.push(extra);
        }
        seeds.push(s);
    }
    if let Some(prev) = warm {
        for g in &grid {
            let mut s = prev.to_vec();
            s.push(*g);
            seeds.push(s);
        }
    }
    seeds
}

/// Exponential fits for `k = 1..=k_max`, each warm-started from the previous
/// one. The returned costs are non-increasing in `k`.
pub fn fit_exponential_path(ds: &Dataset, k_max: usize, cfg: &FitConfig) -> Result<Vec<ExpFit>, FitError> {
    cfg.validate()?;
    if k_max == 0 {
        return Err(ModelError::InvalidSpec("exponential k must be >= 1".into()).into());
    }
    let prob = ExpProblem::new(ds);
    let v_max = ds.samples().map(|s| s.v).fold(0.0f64, f64::max);
    let fp = ds.fingerprint();
    let mut out: Vec<ExpFit> = Vec::with_capacity(k_max);
    let mut prev_beta: Option<Vec<f64>> = None;
    for k in 1..=k_max {
        let need = 2 * k + 2;
        if ds.n_samples() < need {
            return Err(FitError::TooFewSamples {
                need,
                got: ds.n_samples(),
            });
        }
        let seeds = exp_seeds(k, prob.v_scale, v_max, cfg, prev_beta.as_deref());
        let runs: Vec<Option<(VpState, bool, usize)>> =
            seeds.par_iter().map(|s| prob.levenberg_marquardt(s, cfg)).collect();
        let converged_any = runs.iter().flatten().any(|(_, c, _)| *c);
        let best = runs
            .into_iter()
            .flatten()
            .min_by(|a, b| a.0.ssr.total_cmp(&b.0.ssr))
            .ok_or(ModelError::Overflow {
                exponent: f64::INFINITY,
            })?;
        let (st, _, iterations) = best;
        let mut params = prob.to_params(&st);
        let mut ssr = st.ssr;
        let mut scaled_beta = st.beta.clone();
        if let Some(prev) = out.last() {
            if ssr > prev.ssr {
                // the smaller model padded with a zero-weight term
                let mut pe = prev.model.as_exp()?;
                pe.alpha.push(0.0);
                pe.beta.push(BETA_GRID[0] * 550.0 / v_max.max(f64::MIN_POSITIVE));
                params = pe;
                ssr = prev.ssr;
                scaled_beta = params.beta.iter().map(|b| b * prob.v_scale).collect();
            }
        }
        let spec = ModelSpec::exponential(k)?;
        let model = FittedModel::new(spec, params.to_flat(), fp.clone(), Normalization::IDENTITY)?;
        debug!("exp k={k}: ssr={ssr:.6e} after {iterations} iterations");
        out.push(ExpFit {
            model,
            ssr,
            converged: converged_any,
            iterations,
        });
        prev_beta = Some(scaled_beta);
    }
    Ok(out)
}

/// Variable-projection LM with multistart; see [`fit_exponential_path`].
pub fn fit_exponential(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FittedModel, FitError> {
    if spec.family != Family::Exponential {
        return Err(ModelError::UnsupportedFamily(spec.family).into());
    }
    spec.validate()?;
    let mut path = fit_exponential_path(ds, spec.k, cfg)?;
    let last = path.pop().expect("k >= 1");
    if last.converged {
        Ok(last.model)
    } else {
        Err(FitError::NoConvergence {
            best: Box::new(last.model),
            cost: last.ssr,
        })
    }
}

/// Network inputs and targets in normalized units, one row per sample with
/// full lag history.
pub(crate) fn nn_rows(ds: &Dataset, p: usize, norm: &Normalization) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for traj in ds.trajectories() {
        let s = traj.samples();
        for i in p..s.len() {
            x.push(norm.v.apply(s[i].v));
            x.push(norm.v_dot.apply(s[i].v_dot));
            for k in 1..=p {
                x.push(norm.v.apply(s[i - k].v));
                x.push(norm.v_dot.apply(s[i - k].v_dot));
            }
            y.push(norm.p.apply(s[i].p));
        }
    }
    (x, y)
}

fn nn_rmse(net: &NnParams, x: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let n_in = net.n_inputs();
    let mut scratch = NnScratch::default();
    let sse: f64 = x
        .chunks_exact(n_in)
        .zip(y)
        .map(|(xi, yi)| (net.forward_cached(xi, &mut scratch) - yi).powi(2))
        .sum();
    (sse / y.len() as f64).sqrt()
}

/// Mean squared error and its gradient over `rows`, in normalized units.
pub(crate) fn nn_loss_grad(net: &NnParams, x: &[f64], y: &[f64], rows: &[usize], grad: &mut [f64]) -> f64 {
    let n_in = net.n_inputs();
    let mut scratch = NnScratch::default();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &r in rows {
        let xi = &x[r * n_in..(r + 1) * n_in];
        let e = net.forward_cached(xi, &mut scratch) - y[r];
        loss += e * e * scale;
        net.backward(xi, &scratch, 2.0 * e * scale, grad);
    }
    loss
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch Adam on z-scored data. Keeps the parameters with the lowest
/// validation RMSE seen, including the initial ones.
pub fn fit_nn(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FittedModel, FitError> {
    if !spec.family.is_nn() {
        return Err(ModelError::UnsupportedFamily(spec.family).into());
    }
    spec.validate()?;
    cfg.validate()?;
    let (train, val) = if ds.trajectories().len() >= 2 {
        split(ds, 1.0 - NN_VALIDATION_FRACTION, cfg.seed)?
    } else {
        warn!("single trajectory: validating on the training data");
        (ds.clone(), ds.clone())
    };
    let norm = Normalization::fit(&train);
    let (xt, yt) = nn_rows(&train, spec.p, &norm);
    let (xv, yv) = nn_rows(&val, spec.p, &norm);
    if yt.is_empty() {
        return Err(FitError::TooFewSamples {
            need: spec.p + 1,
            got: 0,
        });
    }

    let net = initial_network(spec, cfg.seed, &xt);
    fit_nn_from(net, spec, cfg, ds, norm, (&xt, &yt), (&xv, &yv))
}

/// Seeded He initialization with hidden biases centred on the training inputs.
pub fn initial_network(spec: &ModelSpec, seed: u64, rows: &[f64]) -> NnParams {
    let mut net = NnParams::init(spec.d, spec.p, seed);
    net.center_biases(rows);
    net
}

fn fit_nn_from(
    mut net: NnParams,
    spec: &ModelSpec,
    cfg: &FitConfig,
    ds: &Dataset,
    norm: Normalization,
    (xt, yt): (&[f64], &[f64]),
    (xv, yv): (&[f64], &[f64]),
) -> Result<FittedModel, FitError> {
    let nu = param_count(spec.d, spec.p);
    let mut best_val = nn_rmse(&net, xv, yv);
    let mut best = net.params().to_vec();
    let mut grad = vec![0.0; nu];
    let mut m1 = vec![0.0; nu];
    let mut m2 = vec![0.0; nu];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..yt.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));

    for epoch in 0..cfg.nn_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.nn_batch) {
            let loss = nn_loss_grad(&net, xt, yt, batch, &mut grad);
            if !loss.is_finite() {
                return Err(FitError::Diverged { epoch });
            }
            step += 1;
            let c1 = 1.0 - ADAM_B1.powi(step);
            let c2 = 1.0 - ADAM_B2.powi(step);
            for (((w, g), a), b) in net.params_mut().iter_mut().zip(&grad).zip(&mut m1).zip(&mut m2) {
                *a = ADAM_B1 * *a + (1.0 - ADAM_B1) * g;
                *b = ADAM_B2 * *b + (1.0 - ADAM_B2) * g * g;
                *w -= cfg.nn_lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
            }
        }
        let v = nn_rmse(&net, xv, yv);
        if !v.is_finite() {
            return Err(FitError::Diverged { epoch });
        }
        if v < best_val {
            best_val = v;
            best.copy_from_slice(net.params());
        }
        if epoch % 500 == 0 {
            debug!("epoch {epoch}: validation rmse {v:.4e} (normalized)");
        }
    }
    Ok(FittedModel::new(spec.clone(), best, ds.fingerprint(), norm)?)
}

/// Fits any family with the matching estimator.
pub fn fit(ds: &Dataset, spec: &ModelSpec, cfg: &FitConfig) -> Result<FittedModel, FitError> {
    match spec.family {
        Family::Poly | Family::PolyAr => fit_poly(ds, spec),
        Family::Exponential => fit_exponential(ds, spec, cfg),
        Family::Nn | Family::NnAr => fit_nn(ds, spec, cfg),
    }
}
