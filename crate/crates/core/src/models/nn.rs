//! Cascade network used for the `Nn` and `NnAr` families.
//!
//! Neuron 1 sees the inputs `x = (v, v̇, lagged pairs..)`; neuron ℓ > 1 sees
//! `x` plus the activation of neuron ℓ−1. Every neuron has a bias and a ReLU.
//! The output is `w·a_d + b`. With two inputs this gives
//! `ν = 3 + 4(d−1) + 2 = 4d + 1`; each lag adds two inputs to every neuron.
//!
//! Flat layout: neuron 1 `[w_x.., b]`, neuron ℓ `[w_x.., w_prev, b]`, then
//! `[w_out, b_out]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;

pub fn param_count(d: usize, p: usize) -> usize {
    let n_in = 2 + 2 * p;
    (n_in + 1) + d.saturating_sub(1) * (n_in + 2) + 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnParams {
    d: usize,
    p: usize,
    params: Vec<f64>,
}

/// Per-sample forward state reused by backprop.
#[derive(Debug, Clone, Default)]
pub struct NnScratch {
    z: Vec<f64>,
    a: Vec<f64>,
}

impl NnParams {
    pub fn from_flat(d: usize, p: usize, params: Vec<f64>) -> Result<Self, ModelError> {
        if d == 0 {
            return Err(ModelError::InvalidSpec("network depth d must be >= 1".into()));
        }
        let nu = param_count(d, p);
        if params.len() != nu {
            return Err(ModelError::ShapeMismatch {
                expected: nu,
                got: params.len(),
            });
        }
        Ok(Self { d, p, params })
    }

    /// He-normal weights, small positive hidden biases, zero output bias.
    pub fn init(d: usize, p: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = 2 + 2 * p;
        let mut params = Vec::with_capacity(param_count(d, p));
        for layer in 0..d {
            let fan_in = if layer == 0 { n_in } else { n_in + 1 };
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            for _ in 0..fan_in {
                params.push(dist.sample(&mut rng));
            }
            params.push(0.1);
        }
        let out = Normal::new(0.0, 1.0).expect("finite std");
        params.push(out.sample(&mut rng));
        params.push(0.0);
        Self { d, p, params }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_inputs(&self) -> usize {
        2 + 2 * self.p
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.params
    }

    fn offset(&self, layer: usize) -> usize {
        let n_in = self.n_inputs();
        if layer == 0 {
            0
        } else {
            (n_in + 1) + (layer - 1) * (n_in + 2)
        }
    }

    /// Shifts each hidden bias so the neuron's pre-activation has zero median
    /// over `rows` (flattened, `n_inputs()` per row). Neurons are processed in
    /// order, so later ones see the already-centred activations.
    pub fn center_biases(&mut self, rows: &[f64]) {
        let n_in = self.n_inputs();
        let n = rows.len() / n_in;
        if n == 0 {
            return;
        }
        let mut prev = vec![0.0; n];
        let mut z = vec![0.0; n];
        for layer in 0..self.d {
            let off = self.offset(layer);
            let bias_at = off + n_in + usize::from(layer > 0);
            for (r, x) in rows.chunks_exact(n_in).enumerate() {
                let mut acc: f64 = self.params[off..off + n_in].iter().zip(x).map(|(a, b)| a * b).sum();
                if layer > 0 {
                    acc += self.params[off + n_in] * prev[r];
                }
                z[r] = acc;
            }
            let mut sorted = z.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[n / 2];
            self.params[bias_at] = -median;
            for (a, zi) in prev.iter_mut().zip(&z) {
                *a = (zi - median).max(0.0);
            }
        }
    }

    /// Network output in normalized units.
    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.n_inputs() {
            return Err(ModelError::ShapeMismatch {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        let mut scratch = NnScratch::default();
        Ok(self.forward_cached(x, &mut scratch))
    }

    /// Forward pass that records pre-activations for [`Self::backward`].
    /// `x` must have `n_inputs()` entries.
    pub fn forward_cached(&self, x: &[f64], scratch: &mut NnScratch) -> f64 {
        debug_assert_eq!(x.len(), self.n_inputs());
        let n_in = x.len();
        scratch.z.clear();
        scratch.a.clear();
        let mut prev = 0.0;
        for layer in 0..self.d {
            let off = self.offset(layer);
            let w = &self.params[off..off + n_in];
            let mut z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            let mut at = off + n_in;
            if layer > 0 {
                z += self.params[at] * prev;
                at += 1;
            }
            z += self.params[at];
            prev = z.max(0.0);
            scratch.z.push(z);
            scratch.a.push(prev);
        }
        let out = self.offset(self.d);
        self.params[out] * prev + self.params[out + 1]
    }

    /// Adds `d_out · ∂out/∂θ` into `grad` using the state of the last
    /// `forward_cached` call on the same `x`.
    pub fn backward(&self, x: &[f64], scratch: &NnScratch, d_out: f64, grad: &mut [f64]) {
        let n_in = x.len();
        let out = self.offset(self.d);
        let last = scratch.a[self.d - 1];
        grad[out] += d_out * last;
        grad[out + 1] += d_out;
        let mut da = d_out * self.params[out];
        for layer in (0..self.d).rev() {
            let dz = if scratch.z[layer] > 0.0 { da } else { 0.0 };
            if dz == 0.0 {
                // nothing flows further back through this neuron
                break;
            }
            let off = self.offset(layer);
            for (g, xi) in grad[off..off + n_in].iter_mut().zip(x) {
                *g += dz * xi;
            }
            let mut at = off + n_in;
            if layer > 0 {
                grad[at] += dz * scratch.a[layer - 1];
                da = dz * self.params[at];
                at += 1;
            }
            grad[at] += dz;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu(x: f64) -> f64 {
        x.max(0.0)
    }

    #[test]
    fn counts_match_hand_count() {
        // d=1: [w_v, w_vd, b] + [w_o, b_o]
        assert_eq!(param_count(1, 0), 3 + 2);
        // d=2: + [w_v, w_vd, w_prev, b]
        assert_eq!(param_count(2, 0), 3 + 4 + 2);
        assert_eq!(param_count(3, 0), 3 + 4 + 4 + 2);
        for d in 1..20 {
            assert_eq!(param_count(d, 0), 4 * d + 1);
            assert_eq!(NnParams::init(d, 0, 1).params().len(), 4 * d + 1);
        }
        // one lag adds two inputs to each neuron
        assert_eq!(param_count(8, 1), 33 + 16);
        assert_eq!(param_count(8, 5), 33 + 80);
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut params = vec![0.0; param_count(3, 0)];
        *params.last_mut().unwrap() = 4.25;
        let net = NnParams::from_flat(3, 0, params).unwrap();
        for x in [[0.0, 0.0], [10.0, -3.0], [-1.0, 1e6]] {
            assert_eq!(net.forward(&x).unwrap(), 4.25);
        }
    }

    #[test]
    fn single_neuron_is_relu() {
        let net = NnParams::from_flat(1, 0, vec![1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[-1.0, 7.0]).unwrap(), 0.0);
        assert_eq!(net.forward(&[2.0, 7.0]).unwrap(), 2.0);
    }

    #[test]
    fn seeded_two_neuron_forward_matches_hand_computation() {
        let net = NnParams::init(2, 0, 0);
        let q = net.params();
        let a1 = relu(q[0] * 1.0 + q[1] * 1.0 + q[2]);
        let a2 = relu(q[3] * 1.0 + q[4] * 1.0 + q[5] * a1 + q[6]);
        let expected = q[7] * a2 + q[8];
        let got = net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(got, expected);
        assert_eq!(NnParams::init(2, 0, 0), net);
    }

    #[test]
    fn centred_neurons_fire_on_half_the_rows() {
        let mut net = NnParams::init(5, 1, 4);
        let rows: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        net.center_biases(&rows);
        let mut scratch = NnScratch::default();
        let mut active = [0usize; 5];
        for x in rows.chunks_exact(4) {
            net.forward_cached(x, &mut scratch);
            for (a, z) in active.iter_mut().zip(&scratch.z) {
                *a += usize::from(*z > 0.0);
            }
        }
        for a in active {
            assert!((45..=55).contains(&a), "{active:?}");
        }
    }

    #[test]
    fn shape_mismatch() {
        let net = NnParams::init(2, 1, 0);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(ModelError::ShapeMismatch { expected: 4, got: 2 })
        ));
        assert!(NnParams::from_flat(2, 0, vec![0.0; 8]).is_err());
    }

    #[test]
    fn backward_matches_central_differences() {
        for (d, p, seed) in [(1, 0, 3), (4, 0, 5), (8, 0, 0), (3, 2, 9)] {
            let net = NnParams::init(d, p, seed);
            let x: Vec<f64> = (0..net.n_inputs()).map(|i| 0.3 + 0.17 * i as f64).collect();
            let mut scratch = NnScratch::default();
            net.forward_cached(&x, &mut scratch);
            let mut grad = vec![0.0; net.params().len()];
            net.backward(&x, &scratch, 1.0, &mut grad);
            for (k, &g) in grad.iter().enumerate() {
                let h = 1e-6;
                let mut plus = net.clone();
                plus.params_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[k] -= h;
                let fd = (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * h);
                let denom = g.abs().max(fd.abs()).max(1e-8);
                assert!((g - fd).abs() / denom < 1e-6, "d={d} p={p} k={k}: {g} vs {fd}");
            }
        }
    }
}
