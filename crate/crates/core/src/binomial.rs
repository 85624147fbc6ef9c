//! Exact one-sided binomial tail for a fair coin.
//!
//! Point masses use Loader's saddle-point expansion, which keeps the relative
//! error of each term near machine precision for any `n`. Upper tails are
//! summed directly; lower tails go through the complement so the small side is
//! always the one that is summed.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinomialError {
    #[error("invalid arguments: k = {k} must not exceed n = {n}, and n must be at least 1")]
    InvalidArgs { k: u64, n: u64 },
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn exact_binomial_tail(k: u64, n: u64) -> Result<f64, BinomialError> {
    if n == 0 || k > n {
        return Err(BinomialError::InvalidArgs { k, n });
    }
    if k == 0 {
        return Ok(1.0);
    }
    if 2 * k > n {
        Ok(upper_tail(k, n))
    } else {
        // P(X >= k) = 1 - P(X <= k-1) = 1 - P(X >= n-k+1) by symmetry.
        Ok((1.0 - upper_tail(n - k + 1, n)).clamp(0.0, 1.0))
    }
}

/// Probability mass `P(X = x)` for `X ~ Binomial(n, 1/2)`.
pub fn fair_binomial_pmf(x: u64, n: u64) -> f64 {
    if x > n {
        return 0.0;
    }
    if x == 0 || x == n {
        return 0.5f64.powi(n.min(i32::MAX as u64) as i32);
    }
    let (xf, nf) = (x as f64, n as f64);
    let half = 0.5 * nf;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, half) - bd0(nf - xf, half);
    let lf = (2.0 * PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

// Sum of P(X = i) for i in m..=n with m > n/2. Terms decrease monotonically,
// so they are accumulated smallest-first.
fn upper_tail(m: u64, n: u64) -> f64 {
    let mut terms = Vec::new();
    let mut i = m;
    while i <= n {
        let t = fair_binomial_pmf(i, n);
        if t == 0.0 || (!terms.is_empty() && t < terms[0] * 1e-20) {
            break;
        }
        terms.push(t);
        i += 1;
    }
    terms.iter().rev().sum()
}

/// `ln(n!) - ln(sqrt(2 pi n) (n/e)^n)`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        let nf = n as f64;
        let ln_fact: f64 = (2..=n).map(|i| (i as f64).ln()).sum();
        return ln_fact - (nf + 0.5) * nf.ln() + nf - 0.5 * (2.0 * PI).ln();
    }
    let nf = n as f64;
    let nn = nf * nf;
    (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_successes_is_total_mass() {
        for n in [1, 2, 10, 1000] {
            assert_eq!(exact_binomial_tail(0, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn all_successes_is_power_of_half() {
        assert_eq!(exact_binomial_tail(3, 3).unwrap(), 0.125);
        assert!((exact_binomial_tail(10, 10).unwrap() - 2f64.powi(-10)).abs() < 1e-15);
    }

    #[test]
    fn half_of_ten() {
        assert!((exact_binomial_tail(5, 10).unwrap() - 0.623046875).abs() < 1e-14);
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(exact_binomial_tail(4, 3).is_err());
        assert!(exact_binomial_tail(0, 0).is_err());
    }

    #[test]
    fn pmf_sums_to_one() {
        for n in [1u64, 7, 64, 333] {
            let s: f64 = (0..=n).map(|x| fair_binomial_pmf(x, n)).sum();
            assert!((s - 1.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }
}
