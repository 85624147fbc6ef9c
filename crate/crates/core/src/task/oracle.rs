//! Exhaustive search over single-switch schedules `lambda_hi` on
//! `[0, switch)` followed by `lambda_lo` until the horizon.

use serde::{Deserialize, Serialize};

use super::{TaskError, TaskSpec};
use crate::population::HyperParams;
use crate::schedule::Schedule;

/// Largest number of schedules the oracle will enumerate.
pub const MAX_COMBINATIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchGrid {
    pub lambda_hi: Vec<f64>,
    pub lambda_lo: Vec<f64>,
    pub switch_steps: Vec<u64>,
}

impl SwitchGrid {
    /// The same lambda grid for both phases and `n_switch` evenly spaced
    /// switch points in `[0, horizon]`.
    pub fn uniform(lambdas: Vec<f64>, horizon: u64, n_switch: u64) -> Self {
        let switch_steps = (0..n_switch)
            .map(|i| horizon * i / (n_switch - 1).max(1))
            .collect();
        Self {
            lambda_hi: lambdas.clone(),
            lambda_lo: lambdas,
            switch_steps,
        }
    }

    pub fn len(&self) -> usize {
        self.lambda_hi.len() * self.lambda_lo.len() * self.switch_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub switch_step: u64,
    pub final_q: f64,
    pub schedule: Schedule,
}

/// Noiseless final score of a single-switch schedule. For the noisy quadratic
/// this is the expected score, tracked exactly through its mean and variance.
pub fn switch_final_q(task: &TaskSpec, hi: f64, lo: f64, switch: u64) -> f64 {
    let horizon = task.horizon();
    let switch = switch.min(horizon);
    match task {
        TaskSpec::DeceptiveLr(t) => {
            let mut theta = [0.0, -1.0];
            t.advance(&mut theta, hi, switch);
            t.advance(&mut theta, lo, horizon - switch);
            t.noiseless_q(&theta, lo)
        }
        TaskSpec::NoisyQuadratic(t) => {
            let (mut m, mut v) = (t.theta0, 0.0);
            t.expected_advance(&mut m, &mut v, hi, switch);
            t.expected_advance(&mut m, &mut v, lo, horizon - switch);
            t.expected_q(m, v)
        }
    }
}

pub fn switch_schedule(hi: f64, lo: f64, switch: u64, horizon: u64) -> Result<Schedule, TaskError> {
    let h = |v| HyperParams::from_pairs([("lambda", v)]).map_err(|e| TaskError::InvalidSpec(e.to_string()));
    let mut s = Schedule::default();
    let switch = switch.min(horizon);
    if switch > 0 {
        s.push(0, switch, h(hi)?);
    }
    s.push(switch, horizon, h(lo)?);
    Ok(s)
}

/// Enumerates every schedule in `grid`; ties keep the first one found in
/// `(hi, lo, switch)` order.
pub fn oracle_best_schedule(task: &TaskSpec, grid: &SwitchGrid) -> Result<OracleResult, TaskError> {
    if grid.is_empty() || grid.len() > MAX_COMBINATIONS {
        return Err(TaskError::InvalidSpec(format!(
            "grid must hold between 1 and {MAX_COMBINATIONS} schedules, got {}",
            grid.len()
        )));
    }
    let mut best: Option<(f64, f64, u64, f64)> = None;
    for &hi in &grid.lambda_hi {
        for &lo in &grid.lambda_lo {
            for &sw in &grid.switch_steps {
                let q = switch_final_q(task, hi, lo, sw);
                if best.is_none_or(|b| q > b.3) {
                    best = Some((hi, lo, sw, q));
                }
            }
        }
    }
    let (hi, lo, sw, q) = best.expect("non-empty grid");
    Ok(OracleResult {
        lambda_hi: hi,
        lambda_lo: lo,
        switch_step: sw.min(task.horizon()),
        final_q: q,
        schedule: switch_schedule(hi, lo, sw, task.horizon())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::replay_schedule;
    use crate::task::{DeceptiveLr, NoisyQuadratic};

    fn log_grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.01f64 * 100f64.powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn single_schedule_grid() {
        let task = TaskSpec::DeceptiveLr(DeceptiveLr::default());
        let grid = SwitchGrid {
            lambda_hi: vec![0.5],
            lambda_lo: vec![0.1],
            switch_steps: vec![2000],
        };
        let r = oracle_best_schedule(&task, &grid).unwrap();
        assert_eq!((r.lambda_hi, r.lambda_lo, r.switch_step), (0.5, 0.1, 2000));
    }

    #[test]
    fn deceptive_optimum_is_high_then_late_switch() {
        let task = TaskSpec::DeceptiveLr(DeceptiveLr::default());
        let lambdas = log_grid(12);
        let r = oracle_best_schedule(&task, &SwitchGrid::uniform(lambdas.clone(), 4000, 41)).unwrap();
        assert_eq!(r.lambda_hi, *lambdas.last().unwrap());
        assert!(r.switch_step >= 3000, "{r:?}");
    }

    #[test]
    fn deceptive_certificate() {
        let task = TaskSpec::DeceptiveLr(DeceptiveLr::default());
        let (lo, hi) = (0.01, 1.0);
        // Early: constant low beats constant high after 200 steps.
        let early = TaskSpec::DeceptiveLr(DeceptiveLr {
            horizon: 200,
            ..DeceptiveLr::default()
        });
        assert!(switch_final_q(&early, lo, lo, 0) > switch_final_q(&early, hi, hi, 0));
        // Late: high-then-low beats constant low at the horizon.
        assert!(switch_final_q(&task, hi, lo, 3800) > switch_final_q(&task, lo, lo, 0));
    }

    #[test]
    fn replay_reproduces_oracle() {
        let spec = DeceptiveLr {
            penalty_halflife: 50.0,
            ..DeceptiveLr::default()
        };
        let task = TaskSpec::DeceptiveLr(spec.clone());
        let r = oracle_best_schedule(&task, &SwitchGrid::uniform(log_grid(8), 4000, 21)).unwrap();
        let rep = replay_schedule(&r.schedule, &spec, 0, 20).unwrap();
        assert!((rep.final_q - r.final_q).abs() < 1e-9);
    }

    #[test]
    fn quadratic_optimum_decays_late() {
        let task = TaskSpec::NoisyQuadratic(NoisyQuadratic::default());
        let lambdas = log_grid(10);
        let r = oracle_best_schedule(&task, &SwitchGrid::uniform(lambdas.clone(), 1000, 21)).unwrap();
        assert_eq!(r.lambda_lo, lambdas[0]);
        assert!(r.lambda_hi > r.lambda_lo);
        assert!(r.switch_step > 0 && r.switch_step < 1000, "{r:?}");
    }

    #[test]
    fn oversized_grid_rejected() {
        let task = TaskSpec::DeceptiveLr(DeceptiveLr::default());
        let grid = SwitchGrid::uniform(log_grid(30), 4000, 20);
        assert!(oracle_best_schedule(&task, &grid).is_err());
    }
}
