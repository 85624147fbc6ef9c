//! Learning-curve comparison: overlapping-section extraction, the signed
//! best-score difference between two curves, and the one-sided binomial test
//! on pairwise wins inside the overlap.
//!
//! Smoothed values only decide *where* the overlapping sections sit; every
//! score comparison uses the raw evaluations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binomial::exact_binomial_tail;
use crate::gp::{fit_gp, posterior_mean};

/// Number of evenly spaced penalties tried when one curve strictly dominates.
pub const PENALTY_GRID_SIZE: usize = 16;

/// Curves shorter than this are compared on raw values.
pub const MIN_SMOOTHING_POINTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("step {step} breaks the curve spacing: {reason}")]
    BadStep { step: u64, reason: String },
    #[error("score at step {step} is not finite")]
    NonFinite { step: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub score: f64,
}

/// Evaluations of one lineage since it last received new weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    origin_step: u64,
    points: Vec<CurvePoint>,
}

impl TrainingCurve {
    pub fn new(origin_step: u64) -> Self {
        Self {
            origin_step,
            points: Vec::new(),
        }
    }

    pub fn from_points(origin_step: u64, points: impl IntoIterator<Item = (u64, f64)>) -> Result<Self, CurveError> {
        let mut c = Self::new(origin_step);
        for (step, score) in points {
            c.push(step, score)?;
        }
        Ok(c)
    }

    /// Appends an evaluation, keeping steps strictly increasing and uniformly
    /// spaced.
    pub fn push(&mut self, step: u64, score: f64) -> Result<(), CurveError> {
        if !score.is_finite() {
            return Err(CurveError::NonFinite { step });
        }
        match self.points.as_slice() {
            [] if step < self.origin_step => {
                return Err(CurveError::BadStep {
                    step,
                    reason: format!("precedes origin {}", self.origin_step),
                })
            }
            [.., last] if step <= last.step => {
                return Err(CurveError::BadStep {
                    step,
                    reason: format!("not after previous step {}", last.step),
                })
            }
            [first, second, ..] if step - self.points[self.points.len() - 1].step != second.step - first.step => {
                return Err(CurveError::BadStep {
                    step,
                    reason: format!(
                        "spacing {} differs from {}",
                        step - self.points[self.points.len() - 1].step,
                        second.step - first.step
                    ),
                })
            }
            _ => {}
        }
        self.points.push(CurvePoint { step, score });
        Ok(())
    }

    /// Clears the curve and starts a new lineage at `origin_step`.
    pub fn reset(&mut self, origin_step: u64) {
        self.origin_step = origin_step;
        self.points.clear();
    }

    pub fn origin_step(&self) -> u64 {
        self.origin_step
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.step as f64).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    pub fn last_score(&self) -> Option<f64> {
        self.points.last().map(|p| p.score)
    }

    /// The same curve with every score shifted by `-delta`.
    pub fn penalized(&self, delta: f64) -> Self {
        Self {
            origin_step: self.origin_step,
            points: self
                .points
                .iter()
                .map(|p| CurvePoint {
                    step: p.step,
                    score: p.score - delta,
                })
                .collect(),
        }
    }
}

/// Start indices into curves A and B and the common section length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapSections {
    pub r: usize,
    pub s: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub score_diff: f64,
    pub overlap: Option<OverlapSections>,
    pub used_penalization: bool,
    pub p_value: Option<f64>,
}

/// Produces the smoothed scores used to locate overlapping sections.
pub trait Smoother: Sync {
    fn smooth(&self, curve: &TrainingCurve) -> Vec<f64>;
}

impl<S: Smoother + ?Sized> Smoother for &S {
    fn smooth(&self, curve: &TrainingCurve) -> Vec<f64> {
        (**self).smooth(curve)
    }
}

/// Matérn 5/2 GP posterior mean; identity for curves shorter than
/// [`MIN_SMOOTHING_POINTS`] or when fitting fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct GpSmoother;

impl Smoother for GpSmoother {
    fn smooth(&self, curve: &TrainingCurve) -> Vec<f64> {
        let ys = curve.scores();
        if ys.len() < MIN_SMOOTHING_POINTS {
            return ys;
        }
        let xs = curve.steps();
        match fit_gp(&xs, &ys).and_then(|m| posterior_mean(&m, &xs)) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("GP smoothing failed ({e}); using raw scores");
                ys
            }
        }
    }
}

/// Raw scores; useful when curves are already smooth.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySmoother;

impl Smoother for IdentitySmoother {
    fn smooth(&self, curve: &TrainingCurve) -> Vec<f64> {
        curve.scores()
    }
}

/// Memoizes another smoother by exact curve content.
#[derive(Debug, Default)]
pub struct CachedSmoother<S> {
    inner: S,
    cache: Mutex<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

impl<S: Smoother> CachedSmoother<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn clear(&self) {
        self.cache.lock().expect("smoother cache poisoned").clear();
    }
}

impl<S: Smoother> Smoother for CachedSmoother<S> {
    fn smooth(&self, curve: &TrainingCurve) -> Vec<f64> {
        let key: Vec<u64> = curve
            .points
            .iter()
            .flat_map(|p| [p.step, p.score.to_bits()])
            .collect();
        if let Some(hit) = self.cache.lock().expect("smoother cache poisoned").get(&key) {
            return hit.as_ref().clone();
        }
        let v = self.inner.smooth(curve);
        self.cache
            .lock()
            .expect("smoother cache poisoned")
            .insert(key, Arc::new(v.clone()));
        v
    }
}

/// Locates the overlapping sections of two curves from their smoothed values.
pub fn find_overlap(
    a: &TrainingCurve,
    b: &TrainingCurve,
    a_smooth: &[f64],
    b_smooth: &[f64],
) -> Option<OverlapSections> {
    debug_assert_eq!(a.len(), a_smooth.len());
    debug_assert_eq!(b.len(), b_smooth.len());
    overlap_of_smoothed(a_smooth, b_smooth)
}

fn overlap_of_smoothed(a: &[f64], b: &[f64]) -> Option<OverlapSections> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    if a[0] >= b[0] {
        let s = b.iter().position(|&v| v >= a[0])?;
        Some(OverlapSections {
            r: 0,
            s,
            n: a.len().min(b.len() - s),
        })
    } else {
        let r = a.iter().position(|&v| v >= b[0])?;
        Some(OverlapSections {
            r,
            s: 0,
            n: (a.len() - r).min(b.len()),
        })
    }
}

fn section_max(ys: &[f64], start: usize, n: usize) -> f64 {
    ys[start..start + n].iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn pairwise_wins(a: &[f64], b: &[f64], ov: OverlapSections) -> u64 {
    (0..ov.n).filter(|&i| a[ov.r + i] > b[ov.s + i]).count() as u64
}

fn min_max(ys: &[f64]) -> (f64, f64) {
    ys.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)))
}

fn non_empty(a: &TrainingCurve, b: &TrainingCurve) -> Result<(), CurveError> {
    if a.is_empty() || b.is_empty() {
        Err(CurveError::DegenerateInput("cannot compare an empty curve".into()))
    } else {
        Ok(())
    }
}

/// Signed improvement-rate comparison; positive when `a` is judged to be
/// improving faster than `b`. Curves are smoothed with [`GpSmoother`].
pub fn best_score_diff(a: &TrainingCurve, b: &TrainingCurve) -> Result<CurveComparison, CurveError> {
    best_score_diff_with(a, b, &GpSmoother)
}

pub fn best_score_diff_with(
    a: &TrainingCurve,
    b: &TrainingCurve,
    smoother: &dyn Smoother,
) -> Result<CurveComparison, CurveError> {
    non_empty(a, b)?;
    let (a_s, b_s) = (smoother.smooth(a), smoother.smooth(b));
    Ok(compare_smoothed(&a.scores(), &b.scores(), &a_s, &b_s))
}

/// Comparison given raw and smoothed scores of both curves.
///
/// When neither curve reaches the other's start and one lies strictly above
/// the other, the dominant curve is shifted down by each penalty on a grid
/// spanning `[min(hi) - max(lo), min(hi) - min(lo)]`. Shifting commutes with
/// smoothing (scores are standardized before the GP fit), so the shifted
/// curve's smoothed values are the original ones minus the penalty.
pub fn compare_smoothed(a: &[f64], b: &[f64], a_s: &[f64], b_s: &[f64]) -> CurveComparison {
    if let Some(ov) = overlap_of_smoothed(a_s, b_s) {
        let diff = section_max(a, ov.r, ov.n) - section_max(b, ov.s, ov.n);
        let k = pairwise_wins(a, b, ov);
        let p = exact_binomial_tail(k, ov.n as u64).expect("k <= n by construction");
        return CurveComparison {
            score_diff: diff,
            overlap: Some(ov),
            used_penalization: false,
            p_value: Some(p),
        };
    }

    let (a_min, a_max) = min_max(a);
    let (b_min, b_max) = min_max(b);
    let (sign, hi, hi_s, lo, lo_s) = if a_min > b_max {
        (1.0, a, a_s, b, b_s)
    } else if b_min > a_max {
        (-1.0, b, b_s, a, a_s)
    } else {
        return CurveComparison {
            score_diff: 0.0,
            overlap: None,
            used_penalization: false,
            p_value: None,
        };
    };

    let best = penalized_best(hi, hi_s, lo, lo_s);
    CurveComparison {
        score_diff: if best > 0.0 { sign * best } else { 0.0 },
        overlap: None,
        used_penalization: true,
        p_value: None,
    }
}

/// Largest positive difference the dominant curve achieves over the penalty
/// grid, or 0.
fn penalized_best(hi: &[f64], hi_s: &[f64], lo: &[f64], lo_s: &[f64]) -> f64 {
    let (hi_min, _) = min_max(hi);
    let (lo_min, lo_max) = min_max(lo);
    let (d_lo, d_hi) = (hi_min - lo_max, hi_min - lo_min);
    let mut best = 0.0f64;
    let mut shifted = vec![0.0; hi.len()];
    let mut shifted_s = vec![0.0; hi.len()];
    for i in 0..PENALTY_GRID_SIZE {
        let delta = d_lo + (d_hi - d_lo) * i as f64 / (PENALTY_GRID_SIZE - 1) as f64;
        for (j, (y, ys)) in hi.iter().zip(hi_s).enumerate() {
            shifted[j] = y - delta;
            shifted_s[j] = ys - delta;
        }
        if let Some(ov) = overlap_of_smoothed(&shifted_s, lo_s) {
            let d = section_max(&shifted, ov.r, ov.n) - section_max(lo, ov.s, ov.n);
            if d > best {
                best = d;
            }
        }
    }
    best
}

/// One-sided exact binomial p-value that `a` lies above `b` inside the
/// overlapping sections; `None` when the curves do not overlap. Ties count as
/// non-successes.
pub fn binom_test_curves(a: &TrainingCurve, b: &TrainingCurve) -> Option<f64> {
    binom_test_curves_with(a, b, &GpSmoother)
}

pub fn binom_test_curves_with(a: &TrainingCurve, b: &TrainingCurve, smoother: &dyn Smoother) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let ov = overlap_of_smoothed(&smoother.smooth(a), &smoother.smooth(b))?;
    let k = pairwise_wins(&a.scores(), &b.scores(), ov);
    exact_binomial_tail(k, ov.n as u64).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(origin: u64, spacing: u64, ys: &[f64]) -> TrainingCurve {
        TrainingCurve::from_points(origin, ys.iter().enumerate().map(|(i, &y)| (origin + spacing * i as u64, y)))
            .unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn push_enforces_spacing() {
        let mut c = TrainingCurve::new(100);
        assert!(c.push(90, 0.0).is_err());
        c.push(100, 0.0).unwrap();
        c.push(120, 0.0).unwrap();
        assert!(c.push(120, 0.0).is_err());
        assert!(c.push(130, 0.0).is_err());
        assert!(c.push(140, f64::NAN).is_err());
        c.push(140, 1.0).unwrap();
    }

    #[test]
    fn identical_curves_overlap_fully() {
        let ys = linspace(0.0, 1.0, 7);
        let a = curve(0, 10, &ys);
        assert_eq!(
            find_overlap(&a, &a, &ys, &ys),
            Some(OverlapSections { r: 0, s: 0, n: 7 })
        );
    }

    #[test]
    fn later_higher_start_constrains_length() {
        // A starts at step 1000 from 0, B at 1500 from 0.5.
        let a_ys = linspace(0.0, 1.0, 10);
        let b_ys = linspace(0.5, 1.0, 5);
        let a = curve(1000, 100, &a_ys);
        let b = curve(1500, 100, &b_ys);
        // Brute-force scan for the first index of A at or above B's start.
        let r = (0..a_ys.len()).find(|&i| a_ys[i] >= b_ys[0]).unwrap();
        assert_eq!(r, 5);
        assert_eq!(
            find_overlap(&a, &b, &a_ys, &b_ys),
            Some(OverlapSections { r: 5, s: 0, n: 5 })
        );
    }

    #[test]
    fn strict_dominance_has_no_overlap() {
        let a = curve(0, 1, &[1.0; 5]);
        let b = curve(0, 1, &[0.0; 5]);
        assert_eq!(find_overlap(&a, &b, &[1.0; 5], &[0.0; 5]), None);
    }

    #[test]
    fn self_comparison_is_zero() {
        let a = curve(0, 20, &linspace(0.1, 0.6, 12));
        let c = best_score_diff(&a, &a).unwrap();
        assert_eq!(c.score_diff, 0.0);
    }

    #[test]
    fn overlap_difference_is_antisymmetric() {
        let a = curve(0, 1, &[0.5, 0.7, 0.9]);
        let b = curve(0, 1, &[0.5, 0.6, 0.7]);
        let ab = best_score_diff(&a, &b).unwrap();
        let ba = best_score_diff(&b, &a).unwrap();
        assert!((ab.score_diff - 0.2).abs() < 1e-12);
        assert_eq!(ab.score_diff, -ba.score_diff);
    }

    #[test]
    fn empty_curve_is_degenerate() {
        let a = TrainingCurve::new(0);
        let b = curve(0, 1, &[1.0]);
        assert!(matches!(best_score_diff(&a, &b), Err(CurveError::DegenerateInput(_))));
        assert_eq!(binom_test_curves(&a, &b), None);
    }

    #[test]
    fn mixed_case_is_neutral() {
        // Raw ranges intersect, but smoothed B never reaches A's start.
        let a = [0.5, 0.55, 0.6];
        let b = [0.1, 0.52, 0.2];
        let c = compare_smoothed(&a, &b, &a, &[0.1, 0.3, 0.2]);
        assert_eq!(c.score_diff, 0.0);
        assert!(!c.used_penalization);
        assert_eq!(c.p_value, None);
    }

    #[test]
    fn binom_counts_ties_as_failures() {
        let a = curve(0, 1, &[0.5; 3]);
        let p = binom_test_curves(&a, &a).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn binom_all_wins() {
        let a = [0.1, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3];
        let b = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        // Identity smoothing: both start at 0.1, so r = s = 0; position 0 ties.
        let c = compare_smoothed(&a, &b, &a, &b);
        assert_eq!(c.overlap, Some(OverlapSections { r: 0, s: 0, n: 10 }));
        assert!((c.p_value.unwrap() - exact_binomial_tail(9, 10).unwrap()).abs() < 1e-15);
    }

    fn monotone_curve() -> impl Strategy<Value = Vec<f64>> {
        (0.0f64..1.0, prop::collection::vec(0.0f64..0.2, 1..20)).prop_map(|(start, incs)| {
            let mut v = vec![start];
            for d in incs {
                let last = *v.last().unwrap();
                v.push(last + d);
            }
            v
        })
    }

    proptest! {
        #[test]
        fn overlap_indices_are_valid(a in monotone_curve(), b in monotone_curve()) {
            if let Some(ov) = overlap_of_smoothed(&a, &b) {
                prop_assert!(ov.n >= 1);
                prop_assert!(ov.r + ov.n <= a.len());
                prop_assert!(ov.s + ov.n <= b.len());
                prop_assert!(ov.r == 0 || ov.s == 0);
            }
        }

        #[test]
        fn raw_comparison_is_antisymmetric(a in monotone_curve(), b in monotone_curve()) {
            let ab = compare_smoothed(&a, &b, &a, &b);
            let ba = compare_smoothed(&b, &a, &b, &a);
            prop_assert_eq!(ab.score_diff, -ba.score_diff);
            prop_assert_eq!(ab.p_value.is_some(), ab.overlap.is_some());
        }

        #[test]
        fn raw_comparison_is_shift_equivariant(a in monotone_curve(), b in monotone_curve(), c in -5.0f64..5.0) {
            let base = compare_smoothed(&a, &b, &a, &b);
            let (sa, sb): (Vec<f64>, Vec<f64>) = (a.iter().map(|y| y + c).collect(), b.iter().map(|y| y + c).collect());
            let shifted = compare_smoothed(&sa, &sb, &sa, &sb);
            if base.overlap.is_some() && base.overlap == shifted.overlap {
                prop_assert!((base.score_diff - shifted.score_diff).abs() < 1e-9);
            }
        }
    }
}
