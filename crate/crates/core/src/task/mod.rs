//! Trainable toy tasks.
//!
//! A task owns no mutable state; everything that a copy of "the weights" must
//! carry lives in [`TaskState`], including the random stream used for noise.

mod deceptive;
pub mod oracle;
mod quadratic;

pub use deceptive::DeceptiveLr;
pub use quadratic::NoisyQuadratic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::population::HyperParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("missing hyperparameter `{0}`")]
    MissingHyper(String),
    #[error("corrupt state blob: {0}")]
    CorruptBlob(String),
    #[error("invalid task parameters: {0}")]
    InvalidSpec(String),
}

/// Checkpointable task state: parameter vector plus the noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub theta: Vec<f64>,
    pub rng: ChaCha8Rng,
}

const STATE_MAGIC: &[u8; 4] = b"FPTS";
const STATE_VERSION: u16 = 1;

impl TaskState {
    pub fn new(theta: Vec<f64>, rng: ChaCha8Rng) -> Self {
        Self { theta, rng }
    }

    /// Layout, all little-endian: magic `FPTS`, `u16` version, `u32` length,
    /// that many `f64`, then the stream as 32 seed bytes, `u64` stream id and
    /// `u128` word position.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 4 + 8 * self.theta.len() + 32 + 8 + 16);
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.theta.len() as u32).to_le_bytes());
        for v in &self.theta {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn restore(blob: &[u8]) -> Result<Self, TaskError> {
        let mut r = Reader { buf: blob, pos: 0 };
        if r.take(4)? != STATE_MAGIC {
            return Err(TaskError::CorruptBlob("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != STATE_VERSION {
            return Err(TaskError::CorruptBlob(format!("unsupported version {version}")));
        }
        let n = u32::from_le_bytes(r.array()?) as usize;
        let theta = (0..n)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>, _>>()?;
        let seed: [u8; 32] = r.array()?;
        let stream = u64::from_le_bytes(r.array()?);
        let word_pos = u128::from_le_bytes(r.array()?);
        if r.pos != blob.len() {
            return Err(TaskError::CorruptBlob(format!("{} trailing bytes", blob.len() - r.pos)));
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(Self { theta, rng })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TaskError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(TaskError::CorruptBlob(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TaskError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// A simulated training run.
pub trait Trainable: Send + Sync {
    /// Hyperparameter keys that `train_steps` and `evaluate` read.
    fn hyper_names(&self) -> &'static [&'static str];

    fn horizon(&self) -> u64;

    fn init_state(&self, rng: ChaCha8Rng) -> TaskState;

    fn train_steps(&self, state: &mut TaskState, hypers: &HyperParams, k: u64) -> Result<(), TaskError>;

    /// Objective Q, with observation noise drawn from the state's stream.
    fn evaluate(&self, state: &mut TaskState, hypers: &HyperParams) -> Result<f64, TaskError>;
}

pub(crate) fn require(hypers: &HyperParams, key: &str) -> Result<f64, TaskError> {
    hypers.get(key).ok_or_else(|| TaskError::MissingHyper(key.to_string()))
}

/// Task selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    DeceptiveLr(DeceptiveLr),
    NoisyQuadratic(NoisyQuadratic),
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        match self {
            TaskSpec::DeceptiveLr(t) => t.validate(),
            TaskSpec::NoisyQuadratic(t) => t.validate(),
        }
    }

    pub fn trainable(&self) -> &dyn Trainable {
        match self {
            TaskSpec::DeceptiveLr(t) => t,
            TaskSpec::NoisyQuadratic(t) => t,
        }
    }

    pub fn horizon(&self) -> u64 {
        self.trainable().horizon()
    }

    pub fn observation_noise(&self) -> f64 {
        match self {
            TaskSpec::DeceptiveLr(t) => t.noise_std,
            TaskSpec::NoisyQuadratic(t) => t.noise_std,
        }
    }

    /// True when training and evaluation consume no randomness.
    pub fn is_deterministic(&self) -> bool {
        match self {
            TaskSpec::DeceptiveLr(t) => t.noise_std == 0.0,
            TaskSpec::NoisyQuadratic(t) => t.noise_std == 0.0 && t.grad_noise_std == 0.0,
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn snapshot_round_trip_fresh() {
        let s = TaskState::new(vec![0.25, -1.5], ChaCha8Rng::seed_from_u64(9));
        assert_eq!(TaskState::restore(&s.snapshot()).unwrap(), s);
    }

    #[test]
    fn snapshot_keeps_stream_position() {
        let mut s = TaskState::new(vec![1.0; 10], ChaCha8Rng::seed_from_u64(9));
        for _ in 0..10_000 {
            s.rng.next_u64();
        }
        let mut r = TaskState::restore(&s.snapshot()).unwrap();
        assert_eq!(r, s);
        assert_eq!(r.rng.next_u64(), s.rng.next_u64());
    }

    #[test]
    fn corrupt_blobs_rejected() {
        let blob = TaskState::new(vec![1.0], ChaCha8Rng::seed_from_u64(0)).snapshot();
        assert!(TaskState::restore(&blob[..blob.len() - 1]).is_err());
        let mut bad = blob.clone();
        bad[0] = b'X';
        assert!(TaskState::restore(&bad).is_err());
        let mut long = blob;
        long.push(0);
        assert!(TaskState::restore(&long).is_err());
    }

    #[test]
    fn spec_json_uses_kind_tag() {
        let spec: TaskSpec = serde_json::from_str(r#"{"kind":"deceptive_lr","horizon":500}"#).unwrap();
        assert_eq!(spec.horizon(), 500);
        assert!(spec.is_deterministic());
        assert!(serde_json::from_str::<TaskSpec>(r#"{"kind":"deceptive_lr","bogus":1}"#).is_err());
    }
}
