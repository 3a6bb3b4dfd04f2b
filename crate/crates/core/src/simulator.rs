//! Synthetic hydraulic actuator used as ground truth.
//!
//! A syringe drives trapezoidal volume cycles (ramp up at +q, dwell, ramp
//! down at −q) and the chamber pressure follows a known law of the
//! effective volume and commanded flow, optionally with a hysteresis offset,
//! an isothermal air pocket in series and Gaussian sensor noise.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::differentiate;
use crate::domain::{Dataset, InvariantError, Phase, Sample, Trajectory, DEFAULT_SAMPLE_RATE_HZ};
use crate::models::{predict_exp, ExpParams, ModelError, PolyParams, REFERENCE_COEFFS};

/// Atmospheric pressure, kPa.
pub const ATM_KPA: f64 = 101.325;
/// Dwell at full volume between the two ramps, s.
pub const DWELL_S: f64 = 0.5;
pub const AIR_MAX_ITER: usize = 50;
pub const AIR_TOL_MM3: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("air-pocket iteration did not converge at v = {v_injected} mm³")]
    NoFixedPoint { v_injected: f64 },
    #[error("invalid simulator configuration: {0}")]
    Config(String),
    #[error("offset series has {got} entries, dataset has {expected} samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// Pressure as a function of effective volume and flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PressureLaw {
    /// `coeffs[i][j]` multiplies `vⁱ v̇ʲ`.
    Polynomial {
        coeffs: Vec<Vec<f64>>,
    },
    Exponential(ExpParams),
}

impl PressureLaw {
    pub fn reference() -> Self {
        PressureLaw::Polynomial {
            coeffs: REFERENCE_COEFFS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    fn compile(&self) -> Result<CompiledLaw, SimError> {
        match self {
            PressureLaw::Polynomial { coeffs } => {
                let width = coeffs.first().map_or(0, Vec::len);
                if width == 0 || coeffs.iter().any(|r| r.len() != width) {
                    return Err(SimError::Config(
                        "polynomial coefficient table must be rectangular".into(),
                    ));
                }
                let n = coeffs.len() - 1;
                let m = width - 1;
                let terms: Vec<(usize, usize)> = (0..=n).flat_map(|i| (0..=m).map(move |j| (i, j))).collect();
                let alpha = terms.iter().map(|&(i, j)| coeffs[i][j]).collect();
                Ok(CompiledLaw::Poly(PolyParams {
                    n,
                    m,
                    p: 0,
                    terms,
                    alpha,
                    beta: Vec::new(),
                }))
            }
            PressureLaw::Exponential(e) => Ok(CompiledLaw::Exp(e.clone())),
        }
    }
}

enum CompiledLaw {
    Poly(PolyParams),
    Exp(ExpParams),
}

impl CompiledLaw {
    fn eval(&self, v: f64, v_dot: f64) -> Result<f64, ModelError> {
        match self {
            CompiledLaw::Poly(p) => Ok(p.eval_static(v, v_dot)),
            CompiledLaw::Exp(e) => predict_exp(e, v, v_dot),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorTruth {
    pub law: PressureLaw,
    /// Offset added as `gain · sign(v̇)`, kPa.
    pub hysteresis_gain: f64,
    /// Trapped air at atmospheric pressure, mm³.
    pub air_volume: f64,
    pub noise_sigma: f64,
    pub atm_pressure: f64,
}

impl Default for ActuatorTruth {
    fn default() -> Self {
        Self {
            law: PressureLaw::reference(),
            hysteresis_gain: 0.0,
            air_volume: 0.0,
            noise_sigma: 0.3,
            atm_pressure: ATM_KPA,
        }
    }
}

impl ActuatorTruth {
    pub fn noiseless() -> Self {
        Self {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_air(mut self, air_volume: f64) -> Self {
        self.air_volume = air_volume;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SimError::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(self.air_volume >= 0.0 && self.air_volume.is_finite()) {
            return Err(SimError::Config(format!(
                "air_volume must be >= 0, got {}",
                self.air_volume
            )));
        }
        if !(self.atm_pressure > 0.0 && self.atm_pressure.is_finite()) {
            return Err(SimError::Config("atm_pressure must be positive".into()));
        }
        if !self.hysteresis_gain.is_finite() {
            return Err(SimError::Config("hysteresis_gain must be finite".into()));
        }
        Ok(())
    }
}

/// Syringe protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub v_max: f64,
    pub flow_rates: Vec<f64>,
    pub cycles_per_rate: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            v_max: 550.0,
            flow_rates: vec![20.0, 40.0, 60.0, 80.0, 100.0],
            cycles_per_rate: 20,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            seed: 0,
        }
    }
}

impl Protocol {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cycles(mut self, cycles: usize) -> Self {
        self.cycles_per_rate = cycles;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(SimError::Config("v_max must be positive".into()));
        }
        if self.flow_rates.is_empty() || self.flow_rates.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
            return Err(SimError::Config("flow rates must be positive".into()));
        }
        if self.cycles_per_rate == 0 {
            return Err(SimError::Config("cycles_per_rate must be >= 1".into()));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(SimError::Config("sample_rate_hz must be positive".into()));
        }
        Ok(())
    }

    fn ramp_time(&self, q: f64) -> f64 {
        self.v_max / q
    }

    /// Samples strictly inside one ramp: the count of `k` with `k / fs < v_max / q`.
    pub fn ramp_samples(&self, q: f64) -> usize {
        let x = self.ramp_time(q) * self.sample_rate_hz;
        let c = x.ceil();
        // treat values within rounding of an integer as that integer
        if (x - x.round()).abs() < 1e-9 {
            x.round() as usize
        } else {
            c as usize
        }
    }

    /// `floor((2·v_max/q + dwell) · fs) + 1`.
    pub fn samples_per_cycle(&self, q: f64) -> usize {
        let x = (2.0 * self.ramp_time(q) + DWELL_S) * self.sample_rate_hz;
        (x + 1e-9).floor() as usize + 1
    }

    pub fn n_trajectories(&self) -> usize {
        self.flow_rates.len() * self.cycles_per_rate
    }

    pub fn total_samples(&self) -> usize {
        self.flow_rates
            .iter()
            .map(|&q| self.samples_per_cycle(q) * self.cycles_per_rate)
            .sum()
    }

    /// Commanded (v, v̇) at local time index `k` of a cycle at flow `q`.
    fn command(&self, q: f64, k: usize) -> (f64, f64) {
        let ramp = self.ramp_samples(q);
        let dwell_end = self.ramp_time(q) + DWELL_S;
        let tau = k as f64 / self.sample_rate_hz;
        if k < ramp {
            (q * tau, q)
        } else if tau < dwell_end - 1e-9 {
            (self.v_max, 0.0)
        } else {
            ((self.v_max - q * (tau - dwell_end)).max(0.0), -q)
        }
    }
}

/// Volume taken up by compressing the air pocket: `v_inj − (a − a·atm/(atm+P))`.
pub fn air_pocket_transform(truth: &ActuatorTruth, v_injected: f64, p: f64) -> Result<f64, SimError> {
    let a = truth.air_volume;
    if a == 0.0 {
        return Ok(v_injected);
    }
    let denom = truth.atm_pressure + p;
    if denom <= 0.0 {
        return Err(SimError::NoFixedPoint { v_injected });
    }
    let compressed = a * truth.atm_pressure / denom;
    Ok(v_injected - (a - compressed))
}

/// Noise-free pressure at commanded `(v_inj, v̇)`, solving the air-pocket
/// coupling by fixed-point iteration. Returns `(P, v_effective)`.
fn clean_pressure(truth: &ActuatorTruth, law: &CompiledLaw, v_inj: f64, v_dot: f64) -> Result<(f64, f64), SimError> {
    let hyst = truth.hysteresis_gain * sign(v_dot);
    let pressure = |v: f64| law.eval(v, v_dot).map(|p| p + hyst);
    if truth.air_volume == 0.0 {
        return Ok((pressure(v_inj)?, v_inj));
    }
    let mut v = v_inj;
    for _ in 0..AIR_MAX_ITER {
        let p = pressure(v)?;
        let next = air_pocket_transform(truth, v_inj, p)?;
        if (next - v).abs() <= AIR_TOL_MM3 {
            return Ok((pressure(next)?, next));
        }
        v = next;
    }
    Err(SimError::NoFixedPoint { v_injected: v_inj })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs the protocol against the truth. Trajectories are ordered by flow
/// rate, then cycle; time runs continuously across them. Each trajectory
/// draws noise from its own ChaCha stream, so the output is bit-identical
/// regardless of thread count.
pub fn generate(truth: &ActuatorTruth, proto: &Protocol) -> Result<Dataset, SimError> {
    truth.validate()?;
    proto.validate()?;
    let law = truth.law.compile()?;
    let fs = proto.sample_rate_hz;

    let mut plan = Vec::with_capacity(proto.n_trajectories());
    let mut start = 0usize;
    for &q in &proto.flow_rates {
        for _ in 0..proto.cycles_per_rate {
            let idx = plan.len();
            plan.push((idx, q, start));
            start += proto.samples_per_cycle(q);
        }
    }

    let trajectories = plan
        .into_par_iter()
        .map(|(idx, q, start)| -> Result<Trajectory, SimError> {
            let mut rng = ChaCha8Rng::seed_from_u64(proto.seed);
            rng.set_stream(idx as u64);
            let noise = Normal::new(0.0, truth.noise_sigma).map_err(|e| SimError::Config(e.to_string()))?;
            let n = proto.samples_per_cycle(q);
            let mut samples = Vec::with_capacity(n);
            for k in 0..n {
                let (v, v_dot) = proto.command(q, k);
                let (p, _) = clean_pressure(truth, &law, v, v_dot)?;
                let eps = if truth.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let t = (start + k) as f64 / fs;
                samples.push(Sample::new(t, v, v_dot, 0.0, p + eps));
            }
            let phase = Phase::Mixed;
            let traj = Trajectory::new(samples, fs, idx as u32, phase)?;
            // v̈ from the smoothed differentiator; the commanded v̇ is kept
            let d = differentiate(&traj)?;
            let merged = traj
                .samples()
                .iter()
                .zip(d.samples())
                .map(|(s, ds)| Sample {
                    v_ddot: ds.v_ddot,
                    ..*s
                })
                .collect();
            Ok(traj.with_samples(merged)?)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut meta = BTreeMap::new();
    meta.insert("source".to_string(), "simulator".to_string());
    meta.insert("air_volume".to_string(), truth.air_volume.to_string());
    meta.insert(
        "flow_rates".to_string(),
        proto
            .flow_rates
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";"),
    );
    meta.insert("seed".to_string(), proto.seed.to_string());
    Ok(Dataset::new(trajectories, 0, meta)?)
}

/// All trajectories of a generated dataset joined into one continuous
/// stream, truncated to at most `duration_s`.
pub fn continuous_stream(ds: &Dataset, duration_s: f64) -> Result<Trajectory, SimError> {
    let first = &ds.trajectories()[0];
    let t0 = first.samples()[0].t;
    let samples: Vec<Sample> = ds.samples().take_while(|s| s.t - t0 < duration_s).copied().collect();
    Ok(Trajectory::new(
        samples,
        first.sample_rate_hz(),
        first.cycle_id(),
        Phase::Mixed,
    )?)
}

/// Adds `offsets` (kPa, one per sample in dataset order) to the measured
/// pressure only.
pub fn inject_external_load(ds: &Dataset, offsets: &[f64]) -> Result<Dataset, SimError> {
    if offsets.len() != ds.n_samples() {
        return Err(SimError::LengthMismatch {
            expected: ds.n_samples(),
            got: offsets.len(),
        });
    }
    let mut it = offsets.iter();
    let mut trajectories = Vec::with_capacity(ds.trajectories().len());
    for traj in ds.trajectories() {
        let samples = traj
            .samples()
            .iter()
            .map(|s| Sample {
                p: s.p + it.next().expect("length checked"),
                ..*s
            })
            .collect();
        trajectories.push(traj.with_samples(samples)?);
    }
    Ok(ds.with_trajectories(trajectories)?)
}
