//! Evaluator lifecycle decisions and parent fitness for FIRE PBT.
//!
//! Everything here is a pure function of curves and bookkeeping; the engine
//! owns the worker state and applies the outcomes in a fixed order.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{best_score_diff_with, binom_test_curves_with, CurveComparison, Smoother, TrainingCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireConfig {
    #[serde(default = "default_p_stat")]
    pub p_stat: f64,
    pub max_eval_steps: u64,
    pub eval_check_interval: u64,
    /// One threshold per parent sub-population, in order `P2, P3, ...`.
    /// Missing entries default to 0.
    #[serde(default)]
    pub min_steps_before_eval: Vec<u64>,
}

fn default_p_stat() -> f64 {
    0.01
}

impl FireConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p_stat > 0.0 && self.p_stat < 1.0) {
            return Err(format!("p_stat must lie in (0, 1), got {}", self.p_stat));
        }
        if self.eval_check_interval == 0 || self.max_eval_steps < self.eval_check_interval {
            return Err(format!(
                "need max_eval_steps >= eval_check_interval >= 1, got {} and {}",
                self.max_eval_steps, self.eval_check_interval
            ));
        }
        Ok(())
    }

    /// Threshold for the parent sub-population with 1-based index `subpop`.
    pub fn min_steps_for(&self, subpop: usize) -> u64 {
        subpop
            .checked_sub(2)
            .and_then(|i| self.min_steps_before_eval.get(i))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "binom threshold")]
    BinomThreshold,
    #[serde(rename = "no overlap")]
    NoOverlap,
    #[serde(rename = "evolution")]
    Evolution,
    #[serde(rename = "stale target")]
    StaleTarget,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::BinomThreshold => "binom threshold",
            StopReason::NoOverlap => "no overlap",
            StopReason::Evolution => "evolution",
            StopReason::StaleTarget => "stale target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckOutcome {
    Continue,
    Stop(StopReason),
    Succeed { score_diff: f64, p: f64 },
}

/// p-value above which an evaluator that has trained `t` steps is stopped.
pub fn stop_threshold(p_stat: f64, t: u64, max_eval_steps: u64) -> f64 {
    p_stat + (1.0 - t as f64 / max_eval_steps as f64).max(0.0)
}

/// Applies the success and stopping rules to a precomputed comparison.
pub fn decide(cmp: &CurveComparison, p: Option<f64>, t: u64, cfg: &FireConfig) -> CheckOutcome {
    match p {
        Some(p) if cmp.score_diff > 0.0 && p < cfg.p_stat => CheckOutcome::Succeed {
            score_diff: cmp.score_diff,
            p,
        },
        Some(p) if p > stop_threshold(cfg.p_stat, t, cfg.max_eval_steps) => {
            CheckOutcome::Stop(StopReason::BinomThreshold)
        }
        None if t > cfg.max_eval_steps => CheckOutcome::Stop(StopReason::NoOverlap),
        _ => CheckOutcome::Continue,
    }
}

/// Compares an evaluator's curve against its target's and decides its fate.
pub fn check_evaluator(
    eval_curve: &TrainingCurve,
    target_curve: &TrainingCurve,
    t: u64,
    cfg: &FireConfig,
    smoother: &dyn Smoother,
) -> (CheckOutcome, Option<CurveComparison>) {
    if eval_curve.is_empty() || target_curve.is_empty() {
        let outcome = if t > cfg.max_eval_steps {
            CheckOutcome::Stop(StopReason::NoOverlap)
        } else {
            CheckOutcome::Continue
        };
        return (outcome, None);
    }
    let cmp = best_score_diff_with(eval_curve, target_curve, smoother).expect("curves are non-empty");
    let p = binom_test_curves_with(eval_curve, target_curve, smoother);
    (decide(&cmp, p, t, cfg), Some(cmp))
}

/// Sums each member's score difference against every other member of the
/// evaluated set. Pairs are compared once and the result negated for the
/// reverse direction.
pub fn compute_parent_fitness(curves: &[(u32, &TrainingCurve)], smoother: &dyn Smoother) -> Vec<(u32, f64)> {
    let n = curves.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let diffs: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match best_score_diff_with(curves[i].1, curves[j].1, smoother) {
            Ok(c) => c.score_diff,
            Err(_) => 0.0,
        })
        .collect();
    let mut fit = vec![0.0; n];
    for (&(i, j), d) in pairs.iter().zip(diffs) {
        fit[i] += d;
        fit[j] -= d;
    }
    curves.iter().map(|c| c.0).zip(fit).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentCandidate {
    pub id: u32,
    /// Steps trained by the member's current weights.
    pub steps_trained: u64,
    pub min_steps: u64,
    /// Steps since the member was last evaluated or lost an evolution event.
    pub staleness: u64,
    pub has_evaluator: bool,
}

/// The eligible parent that has gone longest without evaluation; ties go to
/// the lowest id.
pub fn select_parent(candidates: &[ParentCandidate]) -> Option<u32> {
    candidates
        .iter()
        .filter(|c| !c.has_evaluator && c.steps_trained >= c.min_steps)
        .max_by(|a, b| a.staleness.cmp(&b.staleness).then(b.id.cmp(&a.id)))
        .map(|c| c.id)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildCandidate {
    pub id: u32,
    pub fitness: Option<f64>,
    pub latest_q: Option<f64>,
}

/// Highest-fitness child; when none has a fitness, the highest latest score.
/// Ties go to the lowest id.
pub fn select_target(children: &[ChildCandidate]) -> Option<u32> {
    let argmax = |key: &dyn Fn(&ChildCandidate) -> Option<f64>| {
        children
            .iter()
            .filter_map(|c| key(c).map(|v| (c.id, v)))
            .fold(None::<(u32, f64)>, |best, (id, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((id, v)),
            })
            .map(|b| b.0)
    };
    argmax(&|c| c.fitness).or_else(|| argmax(&|c| c.latest_q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub evaluator: u32,
    pub parent: u32,
    pub target: u32,
}

/// Evaluators linked to a member that just lost an evolution event.
pub fn on_evolution_event(member: u32, assignments: &[Assignment]) -> Vec<u32> {
    assignments
        .iter()
        .filter(|a| a.parent == member || a.target == member)
        .map(|a| a.evaluator)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::IdentitySmoother;
    use proptest::prelude::*;

    fn cfg() -> FireConfig {
        FireConfig {
            p_stat: 0.01,
            max_eval_steps: 1000,
            eval_check_interval: 100,
            min_steps_before_eval: vec![],
        }
    }

    fn cmp(diff: f64) -> CurveComparison {
        CurveComparison {
            score_diff: diff,
            overlap: None,
            used_penalization: false,
            p_value: None,
        }
    }

    fn curve(ys: &[f64]) -> TrainingCurve {
        TrainingCurve::from_points(0, ys.iter().enumerate().map(|(i, &y)| (i as u64 * 10, y))).unwrap()
    }

    #[test]
    fn no_overlap_past_budget_stops() {
        assert_eq!(decide(&cmp(0.0), None, 1001, &cfg()), CheckOutcome::Stop(StopReason::NoOverlap));
        assert_eq!(decide(&cmp(0.0), None, 1000, &cfg()), CheckOutcome::Continue);
    }

    #[test]
    fn halfway_threshold() {
        assert!((stop_threshold(0.01, 500, 1000) - 0.51).abs() < 1e-15);
        assert_eq!(decide(&cmp(0.1), Some(0.6), 500, &cfg()), CheckOutcome::Stop(StopReason::BinomThreshold));
    }

    #[test]
    fn significant_improvement_succeeds() {
        assert_eq!(
            decide(&cmp(0.05), Some(0.005), 100, &cfg()),
            CheckOutcome::Succeed { score_diff: 0.05, p: 0.005 }
        );
        // Significant but not better never succeeds.
        assert_eq!(decide(&cmp(-0.05), Some(0.005), 100, &cfg()), CheckOutcome::Continue);
    }

    #[test]
    fn weak_evidence_early_continues() {
        assert_eq!(decide(&cmp(0.05), Some(0.02), 10, &cfg()), CheckOutcome::Continue);
    }

    #[test]
    fn parent_staleness_and_threshold() {
        let c = |id, trained, min, stale| ParentCandidate {
            id,
            steps_trained: trained,
            min_steps: min,
            staleness: stale,
            has_evaluator: false,
        };
        assert_eq!(select_parent(&[c(0, 2000, 0, 1000), c(1, 500, 0, 1500)]), Some(1));
        assert_eq!(select_parent(&[c(0, 900, 1000, 900)]), None);
        assert_eq!(select_parent(&[c(3, 100, 0, 100), c(2, 100, 0, 100)]), Some(2));
        let busy = ParentCandidate {
            has_evaluator: true,
            ..c(4, 100, 0, 5000)
        };
        assert_eq!(select_parent(&[busy]), None);
    }

    #[test]
    fn target_prefers_fitness_then_q() {
        let c = |id, f, q| ChildCandidate {
            id,
            fitness: f,
            latest_q: q,
        };
        assert_eq!(
            select_target(&[c(0, Some(0.4), Some(0.9)), c(1, Some(0.7), Some(0.1)), c(2, None, Some(2.0))]),
            Some(1)
        );
        assert_eq!(select_target(&[c(0, None, Some(0.1)), c(1, None, Some(0.3))]), Some(1));
        assert_eq!(select_target(&[c(5, Some(1.0), None), c(4, Some(1.0), None)]), Some(5));
        assert_eq!(select_target(&[]), None);
    }

    #[test]
    fn invalidation_hits_linked_evaluators_only() {
        let a = [
            Assignment { evaluator: 10, parent: 3, target: 0 },
            Assignment { evaluator: 11, parent: 4, target: 1 },
            Assignment { evaluator: 12, parent: 5, target: 3 },
        ];
        assert_eq!(on_evolution_event(3, &a), vec![10, 12]);
        assert_eq!(on_evolution_event(1, &a), vec![11]);
        assert!(on_evolution_event(7, &a).is_empty());
    }

    #[test]
    fn fitness_of_lonely_member_is_zero() {
        let c = curve(&[0.1, 0.2]);
        assert_eq!(compute_parent_fitness(&[(4, &c)], &IdentitySmoother), vec![(4, 0.0)]);
    }

    #[test]
    fn two_member_fitness_is_antisymmetric() {
        let a = curve(&[0.5, 0.7, 0.9]);
        let b = curve(&[0.5, 0.6, 0.7]);
        let f = compute_parent_fitness(&[(0, &a), (1, &b)], &IdentitySmoother);
        assert!((f[0].1 - 0.2).abs() < 1e-12);
        assert_eq!(f[0].1, -f[1].1);
    }

    #[test]
    fn three_member_fitness_matches_pairwise_matrix() {
        let cs = [curve(&[0.1, 0.3, 0.6]), curve(&[0.1, 0.2, 0.25]), curve(&[0.1, 0.4, 0.5])];
        let refs: Vec<(u32, &TrainingCurve)> = cs.iter().enumerate().map(|(i, c)| (i as u32, c)).collect();
        let f = compute_parent_fitness(&refs, &IdentitySmoother);
        for i in 0..3 {
            let brute: f64 = (0..3)
                .filter(|&j| j != i)
                .map(|j| best_score_diff_with(&cs[i], &cs[j], &IdentitySmoother).unwrap().score_diff)
                .sum();
            assert!((f[i].1 - brute).abs() < 1e-12);
        }
        assert!(f.iter().map(|x| x.1).sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn stop_reasons_serialize_as_phrases() {
        assert_eq!(serde_json::to_string(&StopReason::BinomThreshold).unwrap(), "\"binom threshold\"");
        assert_eq!(StopReason::StaleTarget.to_string(), "stale target");
    }

    proptest! {
        #[test]
        fn threshold_monotone(t in 0u64..5000, dt in 0u64..1000, max in 1u64..3000) {
            let a = stop_threshold(0.01, t, max);
            prop_assert!(stop_threshold(0.01, t + dt, max) <= a);
            if t >= max {
                prop_assert_eq!(a, 0.01);
            }
        }
    }
}
