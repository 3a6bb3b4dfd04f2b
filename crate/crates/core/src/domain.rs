//! Shared domain types.
//!
//! Units are fixed across the crate: volume in mm³, flow in mm³/s, flow
//! acceleration in mm³/s², pressure in kPa, time in s and force in mN.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Nominal acquisition rate of the syringe rig.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 25.0;

/// Allowed relative deviation of a sampling interval from `1 / sample_rate_hz`.
pub const SAMPLE_INTERVAL_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error("sample {index}: field `{field}` is not finite")]
    NonFinite { index: usize, field: &'static str },
    #[error("sample {index}: negative volume {value}")]
    NegativeVolume { index: usize, value: f64 },
    #[error("sample {index}: time {t} does not increase (previous {prev})")]
    NonMonotoneTime { index: usize, t: f64, prev: f64 },
    #[error("sample {index}: interval {dt} s deviates from nominal {nominal} s by more than 10%")]
    IrregularSampling { index: usize, dt: f64, nominal: f64 },
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("dataset has no trajectories")]
    EmptyDataset,
    #[error("trajectory {index} is empty")]
    EmptyTrajectory { index: usize },
}

/// One time point of a single chamber.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    pub v_dot: f64,
    pub v_ddot: f64,
    pub p: f64,
}

impl Sample {
    pub fn new(t: f64, v: f64, v_dot: f64, v_ddot: f64, p: f64) -> Self {
        Self { t, v, v_dot, v_ddot, p }
    }

    fn check(&self, index: usize) -> Result<(), InvariantError> {
        for (field, value) in [
            ("t", self.t),
            ("v", self.v),
            ("v_dot", self.v_dot),
            ("v_ddot", self.v_ddot),
            ("p", self.p),
        ] {
            if !value.is_finite() {
                return Err(InvariantError::NonFinite { index, field });
            }
        }
        if self.v < 0.0 {
            return Err(InvariantError::NegativeVolume { index, value: self.v });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Inflation,
    Deflation,
    Mixed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Inflation => "inflation",
            Phase::Deflation => "deflation",
            Phase::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

/// An ordered run of samples, validated at construction.
///
/// Fields are private so that a `Trajectory` can only exist in a valid
/// state: finite samples, non-negative volume, strictly increasing time and
/// a sampling interval within 10% of nominal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    samples: Vec<Sample>,
    sample_rate_hz: f64,
    cycle_id: u32,
    phase: Phase,
}

impl Trajectory {
    pub fn new(samples: Vec<Sample>, sample_rate_hz: f64, cycle_id: u32, phase: Phase) -> Result<Self, InvariantError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(InvariantError::BadSampleRate(sample_rate_hz));
        }
        let nominal = 1.0 / sample_rate_hz;
        for (i, s) in samples.iter().enumerate() {
            s.check(i)?;
            if i > 0 {
                let prev = samples[i - 1].t;
                if s.t <= prev {
                    return Err(InvariantError::NonMonotoneTime { index: i, t: s.t, prev });
                }
                let dt = s.t - prev;
                if (dt - nominal).abs() > SAMPLE_INTERVAL_TOLERANCE * nominal {
                    return Err(InvariantError::IrregularSampling { index: i, dt, nominal });
                }
            }
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            cycle_id,
            phase,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn cycle_id(&self) -> u32 {
        self.cycle_id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Returns a copy with a different phase tag.
    pub fn with_phase(&self, phase: Phase) -> Self {
        Self { phase, ..self.clone() }
    }

    /// Replaces the samples, re-running validation.
    pub fn with_samples(&self, samples: Vec<Sample>) -> Result<Self, InvariantError> {
        Self::new(samples, self.sample_rate_hz, self.cycle_id, self.phase)
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

impl<'de> Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            samples: Vec<Sample>,
            sample_rate_hz: f64,
            cycle_id: u32,
            phase: Phase,
        }
        let raw = Raw::deserialize(de)?;
        Trajectory::new(raw.samples, raw.sample_rate_hz, raw.cycle_id, raw.phase).map_err(serde::de::Error::custom)
    }
}

/// All recorded trajectories of one chamber.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    chamber_id: u8,
    metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(
        trajectories: Vec<Trajectory>,
        chamber_id: u8,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, InvariantError> {
        if trajectories.is_empty() {
            return Err(InvariantError::EmptyDataset);
        }
        if let Some(index) = trajectories.iter().position(|t| t.is_empty()) {
            return Err(InvariantError::EmptyTrajectory { index });
        }
        Ok(Self {
            trajectories,
            chamber_id,
            metadata,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn chamber_id(&self) -> u8 {
        self.chamber_id
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Same chamber and metadata, different trajectories.
    pub fn with_trajectories(&self, trajectories: Vec<Trajectory>) -> Result<Self, InvariantError> {
        Self::new(trajectories, self.chamber_id, self.metadata.clone())
    }

    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Samples in (trajectory, time) order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.trajectories.iter().flat_map(|t| t.samples().iter())
    }

    /// Concatenates the trajectories of `other` after ours.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut trajectories = self.trajectories.clone();
        trajectories.extend(other.trajectories.iter().cloned());
        Dataset {
            trajectories,
            chamber_id: self.chamber_id,
            metadata: self.metadata.clone(),
        }
    }

    /// Deterministic content hash (hex SHA-256 over a canonical byte layout).
    pub fn fingerprint(&self) -> String {
        dataset_fingerprint(self)
    }
}

impl<'de> Deserialize<'de> for Dataset {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            trajectories: Vec<Trajectory>,
            chamber_id: u8,
            #[serde(default)]
            metadata: BTreeMap<String, String>,
        }
        let raw = Raw::deserialize(de)?;
        Dataset::new(raw.trajectories, raw.chamber_id, raw.metadata).map_err(serde::de::Error::custom)
    }
}

/// Hashes every numeric field as little-endian IEEE-754 bytes, so any
/// bit-level change (even 1e-9 kPa) changes the digest.
pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(b"hydrofit-dataset/1");
    h.update([ds.chamber_id]);
    h.update((ds.metadata.len() as u64).to_le_bytes());
    for (k, v) in &ds.metadata {
        h.update((k.len() as u64).to_le_bytes());
        h.update(k.as_bytes());
        h.update((v.len() as u64).to_le_bytes());
        h.update(v.as_bytes());
    }
    h.update((ds.trajectories.len() as u64).to_le_bytes());
    for traj in &ds.trajectories {
        h.update(traj.sample_rate_hz.to_le_bytes());
        h.update(traj.cycle_id.to_le_bytes());
        h.update([traj.phase as u8]);
        h.update((traj.samples.len() as u64).to_le_bytes());
        for s in &traj.samples {
            for x in [s.t, s.v, s.v_dot, s.v_ddot, s.p] {
                h.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 25.0;
                Sample::new(t, 100.0 * t, 100.0, 0.0, 0.5 * t)
            })
            .collect()
    }

    fn ds(samples: Vec<Sample>) -> Dataset {
        let traj = Trajectory::new(samples, 25.0, 0, Phase::Inflation).unwrap();
        Dataset::new(vec![traj], 1, BTreeMap::new()).unwrap()
    }

    #[test]
    fn rejects_bad_samples() {
        let mut s = ramp(4);
        s[2].p = f64::NAN;
        assert!(matches!(
            Trajectory::new(s, 25.0, 0, Phase::Mixed),
            Err(InvariantError::NonFinite { index: 2, field: "p" })
        ));

        let mut s = ramp(4);
        s[1].v = -1.0;
        assert!(matches!(
            Trajectory::new(s, 25.0, 0, Phase::Mixed),
            Err(InvariantError::NegativeVolume { index: 1, .. })
        ));

        let mut s = ramp(4);
        s[3].t = s[2].t;
        assert!(matches!(
            Trajectory::new(s, 25.0, 0, Phase::Mixed),
            Err(InvariantError::NonMonotoneTime { index: 3, .. })
        ));

        let mut s = ramp(4);
        s[3].t += 0.01;
        assert!(matches!(
            Trajectory::new(s, 25.0, 0, Phase::Mixed),
            Err(InvariantError::IrregularSampling { index: 3, .. })
        ));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert_eq!(
            Dataset::new(vec![], 0, BTreeMap::new()),
            Err(InvariantError::EmptyDataset)
        );
        let empty = Trajectory::new(vec![], 25.0, 0, Phase::Mixed).unwrap();
        assert_eq!(
            Dataset::new(vec![empty], 0, BTreeMap::new()),
            Err(InvariantError::EmptyTrajectory { index: 0 })
        );
    }

    #[test]
    fn fingerprint_is_deterministic_and_sensitive() {
        let a = ds(ramp(10));
        let b = ds(ramp(10));
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);

        let mut s = ramp(10);
        s[5].p += 1e-9;
        assert_ne!(a.fingerprint(), ds(s).fingerprint());

        let tagged = a.clone().with_metadata("actuator", "SBA1");
        assert_ne!(a.fingerprint(), tagged.fingerprint());
    }

    #[test]
    fn deserialization_enforces_invariants() {
        let a = ds(ramp(5));
        let json = serde_json::to_string(&a).unwrap();
        let back: Dataset = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);

        let bad = json.replacen("\"t\":0.04", "\"t\":-1.0", 1);
        assert!(serde_json::from_str::<Dataset>(&bad).is_err());
    }
}
