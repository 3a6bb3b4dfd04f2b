use serde::{Deserialize, Serialize};

use super::ModelError;

/// Largest `β·v` evaluated before reporting overflow.
pub const EXP_GUARD: f64 = 700.0;

/// `P = Σ αᵢ·exp(βᵢ·v) + γ·v̇ + δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
}

impl ExpParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: f64, delta: f64) -> Result<Self, ModelError> {
        if alpha.len() != beta.len() || alpha.is_empty() {
            return Err(ModelError::ShapeMismatch {
                expected: alpha.len().max(1),
                got: beta.len(),
            });
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn from_flat(k: usize, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != 2 * k + 2 {
            return Err(ModelError::ShapeMismatch {
                expected: 2 * k + 2,
                got: flat.len(),
            });
        }
        Ok(Self {
            alpha: flat[..k].to_vec(),
            beta: flat[k..2 * k].to_vec(),
            gamma: flat[2 * k],
            delta: flat[2 * k + 1],
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.k() + 2);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.beta);
        out.push(self.gamma);
        out.push(self.delta);
        out
    }
}

pub fn predict_exp(params: &ExpParams, v: f64, v_dot: f64) -> Result<f64, ModelError> {
    let mut acc = params.gamma * v_dot + params.delta;
    for (a, b) in params.alpha.iter().zip(&params.beta) {
        let exponent = b * v;
        if exponent > EXP_GUARD {
            return Err(ModelError::Overflow { exponent });
        }
        acc += a * exponent.exp();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_zero_rate_is_alpha() {
        let p = ExpParams::new(vec![1.0], vec![0.0], 0.0, 0.0).unwrap();
        for (v, vd) in [(0.0, 0.0), (550.0, -100.0), (12.5, 3.0)] {
            assert_eq!(predict_exp(&p, v, vd).unwrap(), 1.0);
        }
    }

    #[test]
    fn direct_evaluation() {
        // 2·e + 0.1·10 + 1
        let p = ExpParams::new(vec![2.0], vec![0.001], 0.1, 1.0).unwrap();
        let got = predict_exp(&p, 1000.0, 10.0).unwrap();
        assert!((got - 7.436563656918091).abs() < 1e-12, "{got}");
    }

    #[test]
    fn affine_in_flow() {
        let p = ExpParams::new(vec![5.0, -1.0], vec![0.005, 0.01], 0.18, 1.0).unwrap();
        let base = predict_exp(&p, 300.0, 20.0).unwrap();
        let bumped = predict_exp(&p, 300.0, 27.5).unwrap();
        assert!((bumped - base - 0.18 * 7.5).abs() < 1e-12);
    }

    #[test]
    fn flow_partial_matches_finite_difference() {
        let p = ExpParams::new(vec![5.0, 0.3, -2.0], vec![0.005, -0.01, 0.002], 0.18, 1.0).unwrap();
        for &(v, vd) in &[(10.0, -40.0), (250.0, 0.0), (549.0, 99.0)] {
            let h = 1e-3 * (1.0 + f64::abs(vd));
            let fd = (predict_exp(&p, v, vd + h).unwrap() - predict_exp(&p, v, vd - h).unwrap()) / (2.0 * h);
            assert!(((fd - p.gamma) / p.gamma).abs() < 1e-8, "{fd}");
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let p = ExpParams::new(vec![1.0], vec![1.0], 0.0, 0.0).unwrap();
        assert!(matches!(predict_exp(&p, 701.0, 0.0), Err(ModelError::Overflow { .. })));
        assert!(predict_exp(&p, 699.0, 0.0).unwrap().is_finite());
    }

    #[test]
    fn flat_layout() {
        let p = ExpParams::new(vec![1.0, 2.0], vec![3.0, 4.0], 5.0, 6.0).unwrap();
        assert_eq!(p.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(ExpParams::from_flat(2, &p.to_flat()).unwrap(), p);
    }
}
