//! Gaussian-process regression with a Matérn 5/2 kernel, used to smooth
//! training curves.
//!
//! [`fit_gp`] standardizes its inputs (steps onto `[0, 1]`, scores to zero
//! mean and unit variance), maximizes the exact log marginal likelihood with a
//! multi-start bounded Nelder–Mead search, and keeps the posterior weights
//! needed for [`posterior_mean`]. Only the posterior mean is provided.
//!
//! Kernel systems on uniformly spaced inputs are Toeplitz; past
//! [`TOEPLITZ_MIN_POINTS`] points they are solved with the Levinson recursion
//! in `O(n²)` instead of a dense Cholesky factorization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const SQRT_5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest system handled by the Toeplitz solver.
pub const TOEPLITZ_MIN_POINTS: usize = 64;

const JITTER_LADDER: [f64; 7] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("kernel matrix is ill-conditioned even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },
}

/// Matérn 5/2 kernel hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GpHyper {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
}

impl GpHyper {
    pub fn new(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Result<Self, GpError> {
        let h = Self {
            signal_variance,
            lengthscale,
            noise_variance,
        };
        if [signal_variance, lengthscale, noise_variance]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            Ok(h)
        } else {
            Err(GpError::DegenerateInput(format!(
                "hyperparameters must be finite and positive: {h:?}"
            )))
        }
    }

    pub fn kernel(&self, r: f64) -> f64 {
        matern52(r, self.signal_variance, self.lengthscale)
    }
}

pub fn matern52(r: f64, signal_variance: f64, lengthscale: f64) -> f64 {
    let s = SQRT_5 * r.abs() / lengthscale;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// A fitted GP. Training inputs are held in the model's internal coordinates
/// (standardized for [`fit_gp`], raw for [`GpModel::with_hyper`]).
#[derive(Debug, Clone)]
pub struct GpModel {
    /// Hyperparameters in the caller's units.
    pub hyper: GpHyper,
    internal_hyper: GpHyper,
    x_offset: f64,
    x_scale: f64,
    y_mean: f64,
    y_scale: f64,
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    weights: Weights,
}

#[derive(Debug, Clone)]
enum Weights {
    /// `(K + σ_n² I)^{-1} y` in internal units.
    Posterior(Vec<f64>),
    Constant(f64),
}

impl GpModel {
    /// Conditions a zero-mean GP with fixed hyperparameters on raw data.
    pub fn with_hyper(hyper: GpHyper, xs: &[f64], ys: &[f64]) -> Result<Self, GpError> {
        check_inputs(xs, ys)?;
        GpHyper::new(hyper.signal_variance, hyper.lengthscale, hyper.noise_variance)?;
        let (alpha, _) = solve_with_jitter(&hyper, xs, ys)?;
        Ok(Self {
            hyper,
            internal_hyper: hyper,
            x_offset: 0.0,
            x_scale: 1.0,
            y_mean: 0.0,
            y_scale: 1.0,
            train_x: xs.to_vec(),
            train_y: ys.to_vec(),
            weights: Weights::Posterior(alpha),
        })
    }

    pub fn train_x(&self) -> Vec<f64> {
        self.train_x.iter().map(|x| x * self.x_scale + self.x_offset).collect()
    }

    pub fn train_y(&self) -> Vec<f64> {
        self.train_y.iter().map(|y| y * self.y_scale + self.y_mean).collect()
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.weights, Weights::Constant(_))
    }
}

/// Fits hyperparameters by empirical Bayes. Deterministic for identical inputs.
pub fn fit_gp(xs: &[f64], ys: &[f64]) -> Result<GpModel, GpError> {
    check_inputs(xs, ys)?;
    let n = xs.len();
    let x_offset = xs[0];
    let x_scale = xs[n - 1] - xs[0];
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let y_var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = y_var.sqrt();

    let sx: Vec<f64> = xs.iter().map(|x| (x - x_offset) / x_scale).collect();
    let min_spacing = sx.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);

    if !(y_scale > 1e-300) || ys.iter().all(|&y| y == ys[0]) {
        let internal = GpHyper {
            signal_variance: 1e-2,
            lengthscale: 1.0,
            noise_variance: 1e-6,
        };
        return Ok(GpModel {
            hyper: internal,
            internal_hyper: internal,
            x_offset,
            x_scale,
            y_mean: ys[0],
            y_scale: 1.0,
            train_x: sx,
            train_y: vec![0.0; n],
            weights: Weights::Constant(ys[0]),
        });
    }

    let sy: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_scale).collect();
    let bounds = [
        (0.01f64.ln(), 100f64.ln()),
        ((0.1 * min_spacing).ln(), 10f64.ln()),
        (1e-6f64.ln(), 2f64.ln()),
    ];
    let objective = |p: &[f64; 3]| -> f64 {
        let h = GpHyper {
            signal_variance: p[0].exp(),
            lengthscale: p[1].exp(),
            noise_variance: p[2].exp(),
        };
        match log_marginal_likelihood(&h, &sx, &sy) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };

    let mut best: Option<([f64; 3], f64)> = None;
    for corner in 0..8u32 {
        let mut start = [0.0; 3];
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            let frac = if corner >> d & 1 == 1 { 0.75 } else { 0.25 };
            start[d] = lo + frac * (hi - lo);
        }
        let (p, f) = nelder_mead(&objective, start, &bounds, 150);
        if best.map_or(true, |(_, bf)| f < bf) {
            best = Some((p, f));
        }
    }
    let (p, f) = best.expect("eight starts");
    if !f.is_finite() {
        return Err(GpError::IllConditioned { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] });
    }
    let internal = GpHyper {
        signal_variance: p[0].exp(),
        lengthscale: p[1].exp(),
        noise_variance: p[2].exp(),
    };
    let (alpha, _) = solve_with_jitter(&internal, &sx, &sy)?;
    let hyper = GpHyper {
        signal_variance: internal.signal_variance * y_var,
        lengthscale: internal.lengthscale * x_scale,
        noise_variance: internal.noise_variance * y_var,
    };
    Ok(GpModel {
        hyper,
        internal_hyper: internal,
        x_offset,
        x_scale,
        y_mean,
        y_scale,
        train_x: sx,
        train_y: sy,
        weights: Weights::Posterior(alpha),
    })
}

/// Posterior mean at each query point.
pub fn posterior_mean(model: &GpModel, query_xs: &[f64]) -> Result<Vec<f64>, GpError> {
    if query_xs.iter().any(|x| !x.is_finite()) {
        return Err(GpError::DegenerateInput("query points must be finite".into()));
    }
    match &model.weights {
        Weights::Constant(c) => Ok(vec![*c; query_xs.len()]),
        Weights::Posterior(alpha) => Ok(query_xs
            .iter()
            .map(|&q| {
                let qs = (q - model.x_offset) / model.x_scale;
                let m: f64 = model
                    .train_x
                    .iter()
                    .zip(alpha)
                    .map(|(&x, &a)| model.internal_hyper.kernel(qs - x) * a)
                    .sum();
                m * model.y_scale + model.y_mean
            })
            .collect()),
    }
}

/// Standard zero-mean GP log marginal likelihood
/// `-½ yᵀK⁻¹y - ½ log|K| - (n/2) log 2π` with `K = k(X, X) + σ_n² I`.
pub fn log_marginal_likelihood(hyper: &GpHyper, xs: &[f64], ys: &[f64]) -> Result<f64, GpError> {
    check_inputs(xs, ys)?;
    let (alpha, logdet) = solve_with_jitter(hyper, xs, ys)?;
    let fit: f64 = ys.iter().zip(&alpha).map(|(y, a)| y * a).sum();
    Ok(-0.5 * fit - 0.5 * logdet - 0.5 * xs.len() as f64 * LN_2PI)
}

fn check_inputs(xs: &[f64], ys: &[f64]) -> Result<(), GpError> {
    if xs.len() != ys.len() {
        return Err(GpError::DegenerateInput(format!(
            "{} inputs but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(GpError::DegenerateInput("need at least 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(GpError::DegenerateInput("non-finite value".into()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GpError::DegenerateInput("inputs must be strictly increasing".into()));
    }
    Ok(())
}

fn is_uniform(xs: &[f64]) -> bool {
    let d = xs[1] - xs[0];
    xs.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= 1e-9 * d.abs().max(1e-300))
}

/// Returns `(K⁻¹ y, log|K|)`, escalating diagonal jitter on failure.
fn solve_with_jitter(hyper: &GpHyper, xs: &[f64], ys: &[f64]) -> Result<(Vec<f64>, f64), GpError> {
    let toeplitz = xs.len() >= TOEPLITZ_MIN_POINTS && is_uniform(xs);
    if let Some(r) = try_solve(hyper, xs, ys, 0.0, toeplitz) {
        return Ok(r);
    }
    for &j in &JITTER_LADDER {
        if let Some(r) = try_solve(hyper, xs, ys, j, toeplitz) {
            return Ok(r);
        }
    }
    Err(GpError::IllConditioned { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
}

fn try_solve(hyper: &GpHyper, xs: &[f64], ys: &[f64], jitter: f64, toeplitz: bool) -> Option<(Vec<f64>, f64)> {
    let diag = hyper.noise_variance + jitter;
    if toeplitz {
        let mut row: Vec<f64> = xs.iter().map(|x| hyper.kernel(x - xs[0])).collect();
        row[0] += diag;
        if let Some(r) = levinson(&row, ys) {
            return Some(r);
        }
    }
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        hyper.kernel(xs[i] - xs[j]) + if i == j { diag } else { 0.0 }
    });
    let chol = k.cholesky()?;
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let alpha = chol.solve(&DVector::from_column_slice(ys));
    let out: Vec<f64> = alpha.iter().copied().collect();
    if out.iter().all(|v| v.is_finite()) && logdet.is_finite() {
        Some((out, logdet))
    } else {
        None
    }
}

/// Levinson recursion for a symmetric positive-definite Toeplitz system with
/// first row `row`. Returns `(T⁻¹ b, log|T|)`, or `None` if a prediction error
/// variance is non-positive.
fn levinson(row: &[f64], b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = row.len();
    let t0 = row[0];
    if !(t0 > 0.0) {
        return None;
    }
    let logdet_scale = n as f64 * t0.ln();
    if n == 1 {
        return Some((vec![b[0] / t0], logdet_scale));
    }
    let r: Vec<f64> = row.iter().map(|v| v / t0).collect();
    let rhs: Vec<f64> = b.iter().map(|v| v / t0).collect();

    let mut y = vec![-r[1]];
    let mut x = vec![rhs[0]];
    let mut beta = 1.0;
    let mut alpha = -r[1];
    let mut logdet = 0.0;
    for k in 1..n {
        beta *= 1.0 - alpha * alpha;
        if !(beta > 1e-14) {
            return None;
        }
        logdet += beta.ln();
        let dot: f64 = (0..k).map(|i| r[i + 1] * x[k - 1 - i]).sum();
        let mu = (rhs[k] - dot) / beta;
        for i in 0..k {
            x[i] += mu * y[k - 1 - i];
        }
        x.push(mu);
        if k < n - 1 {
            let dot: f64 = (0..k).map(|i| r[i + 1] * y[k - 1 - i]).sum();
            alpha = (-r[k + 1] - dot) / beta;
            let z: Vec<f64> = (0..k).map(|i| y[i] + alpha * y[k - 1 - i]).collect();
            y = z;
            y.push(alpha);
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Some((x, logdet + logdet_scale))
    } else {
        None
    }
}

/// Bounded Nelder–Mead minimization; points are clamped into the box.
fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(
    f: &F,
    start: [f64; 3],
    bounds: &[(f64, f64); 3],
    max_evals: usize,
) -> ([f64; 3], f64) {
    let clamp = |mut p: [f64; 3]| {
        for d in 0..3 {
            p[d] = p[d].clamp(bounds[d].0, bounds[d].1);
        }
        p
    };
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    let p0 = clamp(start);
    simplex.push((p0, f(&p0)));
    for d in 0..3 {
        let mut p = p0;
        let step = 0.15 * (bounds[d].1 - bounds[d].0);
        p[d] = if p[d] + step <= bounds[d].1 { p[d] + step } else { p[d] - step };
        let p = clamp(p);
        simplex.push((p, f(&p)));
    }
    let mut evals = 4;
    let order = |s: &mut Vec<([f64; 3], f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
    };
    while evals < max_evals {
        order(&mut simplex);
        let (best, worst) = (simplex[0].1, simplex[3].1);
        let size = (1..4)
            .map(|i| (0..3).map(|d| (simplex[i].0[d] - simplex[0].0[d]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) && size < 1e-5 {
            break;
        }
        let mut centroid = [0.0; 3];
        for (p, _) in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += p[d] / 3.0;
            }
        }
        let along = |t: f64| {
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = centroid[d] + t * (simplex[3].0[d] - centroid[d]);
            }
            clamp(p)
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[3].1 {
                let xc = along(-0.5);
                (xc, f(&xc))
            } else {
                let xc = along(0.5);
                (xc, f(&xc))
            };
            evals += 1;
            if fc < simplex[3].1.min(fr) {
                simplex[3] = (xc, fc);
            } else {
                let b = simplex[0].0;
                for item in simplex.iter_mut().skip(1) {
                    let mut p = [0.0; 3];
                    for d in 0..3 {
                        p[d] = b[d] + 0.5 * (item.0[d] - b[d]);
                    }
                    let p = clamp(p);
                    *item = (p, f(&p));
                }
                evals += 3;
            }
        }
    }
    order(&mut simplex);
    simplex[0]
}
