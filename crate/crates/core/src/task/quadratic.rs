//! Noisy quadratic: `theta <- (1 - lambda) theta + lambda * eps` with
//! `eps ~ N(0, grad_noise_std^2)` per coordinate and `Q = -|theta|^2 / 2`.
//! Large steps shrink the signal fast but leave a high noise floor.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{require, TaskError, TaskState, Trainable};
use crate::population::HyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyQuadratic {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_grad_noise")]
    pub grad_noise_std: f64,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Initial value of every coordinate.
    #[serde(default = "default_theta0")]
    pub theta0: f64,
}

fn default_dim() -> usize {
    10
}
fn default_grad_noise() -> f64 {
    0.1
}
fn default_horizon() -> u64 {
    1000
}
fn default_theta0() -> f64 {
    1.0
}

impl Default for NoisyQuadratic {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            grad_noise_std: default_grad_noise(),
            noise_std: 0.0,
            horizon: default_horizon(),
            theta0: default_theta0(),
        }
    }
}

impl NoisyQuadratic {
    pub fn validate(&self) -> Result<(), TaskError> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.dim >= 1
            && self.horizon >= 1
            && finite_nonneg(self.grad_noise_std)
            && finite_nonneg(self.noise_std)
            && self.theta0.is_finite()
        {
            Ok(())
        } else {
            Err(TaskError::InvalidSpec(format!("{self:?}")))
        }
    }

    /// Expected score after `k` more steps at `lambda`, starting from
    /// per-coordinate mean `m` and variance `v`; both are updated in place.
    pub fn expected_advance(&self, m: &mut f64, v: &mut f64, lambda: f64, k: u64) {
        let l = lambda.min(1.0);
        let s2 = self.grad_noise_std * self.grad_noise_std;
        for _ in 0..k {
            *m *= 1.0 - l;
            *v = (1.0 - l) * (1.0 - l) * *v + l * l * s2;
        }
    }

    pub fn expected_q(&self, m: f64, v: f64) -> f64 {
        -0.5 * self.dim as f64 * (m * m + v)
    }
}

impl Trainable for NoisyQuadratic {
    fn hyper_names(&self) -> &'static [&'static str] {
        &["lambda"]
    }

    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn init_state(&self, rng: ChaCha8Rng) -> TaskState {
        TaskState::new(vec![self.theta0; self.dim], rng)
    }

    fn train_steps(&self, state: &mut TaskState, hypers: &HyperParams, k: u64) -> Result<(), TaskError> {
        let l = require(hypers, "lambda")?.min(1.0);
        let noise = (self.grad_noise_std > 0.0).then(|| Normal::new(0.0, self.grad_noise_std).expect("validated"));
        for _ in 0..k {
            for x in state.theta.iter_mut() {
                let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut state.rng));
                *x = (1.0 - l) * *x + l * eps;
            }
        }
        Ok(())
    }

    fn evaluate(&self, state: &mut TaskState, hypers: &HyperParams) -> Result<f64, TaskError> {
        require(hypers, "lambda")?;
        let q = -0.5 * state.theta.iter().map(|x| x * x).sum::<f64>();
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("validated");
            Ok(q + noise.sample(&mut state.rng))
        } else {
            Ok(q)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn lam(v: f64) -> HyperParams {
        HyperParams::from_pairs([("lambda", v)]).unwrap()
    }

    #[test]
    fn noiseless_linear_recursion() {
        let t = NoisyQuadratic {
            dim: 1,
            grad_noise_std: 0.0,
            ..NoisyQuadratic::default()
        };
        let mut s = t.init_state(ChaCha8Rng::seed_from_u64(0));
        t.train_steps(&mut s, &lam(0.5), 10).unwrap();
        assert_eq!(s.theta, vec![0.5f64.powi(10)]);
    }

    #[test]
    fn optimum_at_origin() {
        let t = NoisyQuadratic::default();
        let mut s = TaskState::new(vec![0.0; 10], ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.evaluate(&mut s, &lam(0.1)).unwrap(), 0.0);
    }

    #[test]
    fn empirical_loss_matches_expectation() {
        let t = NoisyQuadratic::default();
        let (mut m, mut v) = (t.theta0, 0.0);
        t.expected_advance(&mut m, &mut v, 0.3, 50);
        let expected = t.expected_q(m, v);
        let runs = 400;
        let mean: f64 = (0..runs)
            .map(|seed| {
                let mut s = t.init_state(ChaCha8Rng::seed_from_u64(seed));
                t.train_steps(&mut s, &lam(0.3), 50).unwrap();
                t.evaluate(&mut s, &lam(0.3)).unwrap()
            })
            .sum::<f64>()
            / runs as f64;
        // Each run's loss is a scaled chi-square with 10 dof; sd of the mean
        // is |expected| * sqrt(2 / 10) / sqrt(runs).
        let se = expected.abs() * (0.2f64).sqrt() / (runs as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected}");
    }
}
