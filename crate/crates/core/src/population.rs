//! Hyperparameter sampling, truncation selection and explore, shared by plain
//! PBT and the within-sub-population evolution of FIRE PBT.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error("hyperparameter `{0}`: {1}")]
    InvalidSpec(String, String),
    #[error("hyperparameter `{0}` must be positive and finite, got {1}")]
    InvalidValue(String, f64),
}

/// Named positive hyperparameters, ordered by name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperParams(BTreeMap<String, f64>);

impl HyperParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self, PopulationError> {
        let mut h = Self::new();
        for (k, v) in pairs {
            h.set(k, v)?;
        }
        Ok(h)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), PopulationError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(PopulationError::InvalidValue(key.to_string(), value));
        }
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), v * factor)).collect())
    }
}

/// How one hyperparameter is initialised and mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpec {
    pub multipliers: Vec<f64>,
    pub init_low: f64,
    pub init_high: f64,
    /// Optional clamp applied after each explore step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MutationSpec(pub BTreeMap<String, HyperSpec>);

impl MutationSpec {
    pub fn single(name: &str, spec: HyperSpec) -> Self {
        Self(BTreeMap::from([(name.to_string(), spec)]))
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        for (name, s) in &self.0 {
            let bad = |msg: &str| Err(PopulationError::InvalidSpec(name.clone(), msg.to_string()));
            if s.multipliers.is_empty() {
                return bad("multiplier set is empty");
            }
            if s.multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return bad("multipliers must be positive and finite");
            }
            if !(s.init_low.is_finite() && s.init_high.is_finite() && 0.0 < s.init_low && s.init_low <= s.init_high) {
                return bad("initial range must satisfy 0 < low <= high");
            }
            if let Some([lo, hi]) = s.bounds {
                if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                    return bad("bounds must satisfy 0 < low <= high");
                }
            }
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Draws each hyperparameter log-uniformly from its initial range.
pub fn sample_initial_hypers<R: Rng + ?Sized>(spec: &MutationSpec, rng: &mut R) -> HyperParams {
    let mut out = BTreeMap::new();
    for (name, s) in &spec.0 {
        let v = if s.init_low == s.init_high {
            s.init_low
        } else {
            let (a, b) = (s.init_low.ln(), s.init_high.ln());
            rng.random_range(a..b).exp().clamp(s.init_low, s.init_high)
        };
        out.insert(name.clone(), v);
    }
    HyperParams(out)
}

/// Multiplies each hyperparameter by a uniformly drawn element of its
/// multiplier set, then clamps to the configured bounds if any.
pub fn explore<R: Rng + ?Sized>(hypers: &HyperParams, spec: &MutationSpec, rng: &mut R) -> HyperParams {
    let mut out = hypers.0.clone();
    for (name, s) in &spec.0 {
        let m = s.multipliers[rng.random_range(0..s.multipliers.len())];
        if let Some(v) = out.get_mut(name) {
            *v *= m;
            if let Some([lo, hi]) = s.bounds {
                *v = v.clamp(lo, hi);
            }
        }
    }
    HyperParams(out)
}

/// Pairs every member in the bottom `floor(N * bottom_frac)` by fitness with a
/// uniformly random member of the top `floor(N * top_frac)`.
///
/// Ties are broken by a seeded shuffle before a stable sort, so outcomes depend
/// only on fitness ranks. Losers are returned in rank order, worst first.
pub fn truncation_select<R: Rng + ?Sized>(
    members: &[(u32, f64)],
    bottom_frac: f64,
    top_frac: f64,
    rng: &mut R,
) -> Vec<(u32, u32)> {
    let n = members.len();
    let n_bottom = (n as f64 * bottom_frac).floor() as usize;
    let n_top = (n as f64 * top_frac).floor() as usize;
    if n_bottom == 0 || n_top == 0 {
        return Vec::new();
    }
    let mut ranked = members.to_vec();
    ranked.shuffle(rng);
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    let top = &ranked[n - n_top..];
    ranked[..n_bottom]
        .iter()
        .map(|&(loser, _)| (loser, top[rng.random_range(0..n_top)].0))
        .collect()
}
