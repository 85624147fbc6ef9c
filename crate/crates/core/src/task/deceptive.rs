//! A one-parameter task where lowering the learning rate pays off instantly
//! but slows progress, so greedy selection decays it too early.
//!
//! Progress follows `u <- u + min(alpha * lambda, 1) * (1 - u)` and the score is
//! `Q = u - beta * lambda_pen` plus optional observation noise. With
//! `penalty_halflife == 0` the penalty uses the current `lambda`; otherwise it
//! uses an exponential moving average of the `lambda` values trained with, so a
//! switch to a lower rate pays off over a few hundred steps instead of at once.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{require, TaskError, TaskState, Trainable};
use crate::population::HyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeceptiveLr {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub noise_std: f64,
    /// Steps for the penalty average to close half the gap to `lambda`.
    #[serde(default)]
    pub penalty_halflife: f64,
}

fn default_alpha() -> f64 {
    1e-3
}
fn default_beta() -> f64 {
    0.3
}
fn default_horizon() -> u64 {
    4000
}

impl Default for DeceptiveLr {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            horizon: default_horizon(),
            noise_std: 0.0,
            penalty_halflife: 0.0,
        }
    }
}

// theta = [u, lambda_avg]; a negative average means no step has been trained.
const UNSET: f64 = -1.0;

impl DeceptiveLr {
    pub fn validate(&self) -> Result<(), TaskError> {
        let ok = self.alpha.is_finite()
            && self.alpha > 0.0
            && self.beta.is_finite()
            && self.beta >= 0.0
            && self.horizon >= 1
            && self.noise_std.is_finite()
            && self.noise_std >= 0.0
            && self.penalty_halflife.is_finite()
            && self.penalty_halflife >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(TaskError::InvalidSpec(format!("{self:?}")))
        }
    }

    fn relax(&self) -> f64 {
        1.0 - (-1.0 / self.penalty_halflife).exp2()
    }

    /// Advances `theta` by `k` steps at rate `lambda >= 0`.
    pub(crate) fn advance(&self, theta: &mut [f64], lambda: f64, k: u64) {
        let rate = (self.alpha * lambda).min(1.0);
        let relax = if self.penalty_halflife > 0.0 { self.relax() } else { 1.0 };
        for _ in 0..k {
            theta[0] += rate * (1.0 - theta[0]);
            theta[1] = if theta[1] < 0.0 { lambda } else { theta[1] + relax * (lambda - theta[1]) };
        }
    }

    pub(crate) fn noiseless_q(&self, theta: &[f64], lambda: f64) -> f64 {
        let pen = if self.penalty_halflife > 0.0 && theta[1] >= 0.0 { theta[1] } else { lambda };
        theta[0] - self.beta * pen
    }
}

impl Trainable for DeceptiveLr {
    fn hyper_names(&self) -> &'static [&'static str] {
        &["lambda"]
    }

    fn horizon(&self) -> u64 {
        self.horizon
    }

    fn init_state(&self, rng: ChaCha8Rng) -> TaskState {
        TaskState::new(vec![0.0, UNSET], rng)
    }

    fn train_steps(&self, state: &mut TaskState, hypers: &HyperParams, k: u64) -> Result<(), TaskError> {
        let lambda = require(hypers, "lambda")?;
        self.advance(&mut state.theta, lambda, k);
        Ok(())
    }

    fn evaluate(&self, state: &mut TaskState, hypers: &HyperParams) -> Result<f64, TaskError> {
        let lambda = require(hypers, "lambda")?;
        let q = self.noiseless_q(&state.theta, lambda);
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("validated noise std");
            Ok(q + noise.sample(&mut state.rng))
        } else {
            Ok(q)
        }
    }
}
