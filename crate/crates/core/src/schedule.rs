//! Piecewise-constant hyperparameter schedules and replay from scratch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::TrainingCurve;
use crate::population::HyperParams;
use crate::task::{TaskError, Trainable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule has no segments")]
    Empty,
    #[error("schedule gap or overlap at step {0}")]
    Gap(u64),
    #[error("event log contains no evaluations")]
    EmptyLog,
    #[error("lineage walk failed: {0}")]
    BrokenLineage(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Hyperparameters used for steps `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
    pub hypers: HyperParams,
}

/// Contiguous segments starting at step 0. The last segment's hypers are the
/// ones used to evaluate at the final step, so it may be empty
/// (`start == end`) when the hypers changed right at that step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    pub segments: Vec<Segment>,
}

impl Schedule {
    pub fn constant(hypers: HyperParams, steps: u64) -> Self {
        Self {
            segments: vec![Segment {
                start: 0,
                end: steps,
                hypers,
            }],
        }
    }

    /// Appends `[start, end)` with `hypers`, merging into the previous segment
    /// when the hypers are unchanged.
    pub fn push(&mut self, start: u64, end: u64, hypers: HyperParams) {
        if let Some(last) = self.segments.last_mut() {
            if last.hypers == hypers && last.end == start {
                last.end = end;
                return;
            }
        }
        self.segments.push(Segment { start, end, hypers });
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let first = self.segments.first().ok_or(ScheduleError::Empty)?;
        if first.start != 0 {
            return Err(ScheduleError::Gap(0));
        }
        let mut at = 0;
        for (i, s) in self.segments.iter().enumerate() {
            let empty_tail = s.start == s.end && i + 1 == self.segments.len();
            if s.start != at || (s.end <= s.start && !empty_tail) {
                return Err(ScheduleError::Gap(at));
            }
            at = s.end;
        }
        Ok(())
    }

    pub fn end(&self) -> u64 {
        self.segments.last().map_or(0, |s| s.end)
    }

    pub fn final_hypers(&self) -> Option<&HyperParams> {
        self.segments.last().map(|s| &s.hypers)
    }

    /// Step-weighted mean of `key` over `[from, to)`.
    pub fn mean_over(&self, key: &str, from: u64, to: u64) -> Option<f64> {
        if to <= from {
            return None;
        }
        let mut acc = 0.0;
        let mut covered = 0;
        for s in &self.segments {
            let (a, b) = (s.start.max(from), s.end.min(to));
            if b > a {
                acc += (b - a) as f64 * s.hypers.get(key)?;
                covered += b - a;
            }
        }
        (covered > 0).then(|| acc / covered as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Scores every `eval_interval` steps, each taken with the hypers that
    /// trained the preceding interval.
    pub curve: TrainingCurve,
    /// Score at the schedule's end under its final hypers.
    pub final_q: f64,
}

/// Trains a fresh task state under `schedule`.
pub fn replay_schedule(
    schedule: &Schedule,
    task: &dyn Trainable,
    seed: u64,
    eval_interval: u64,
) -> Result<Replay, ScheduleError> {
    schedule.validate()?;
    let eval_interval = eval_interval.max(1);
    let mut state = task.init_state(ChaCha8Rng::seed_from_u64(seed));
    let mut curve = TrainingCurve::new(0);
    let first = &schedule.segments[0].hypers;
    curve
        .push(0, task.evaluate(&mut state, first)?)
        .expect("first point at origin");
    let mut t = 0;
    for seg in &schedule.segments {
        while t < seg.end {
            let next = ((t / eval_interval + 1) * eval_interval).min(seg.end);
            task.train_steps(&mut state, &seg.hypers, next - t)?;
            t = next;
            if t % eval_interval == 0 && t < schedule.end() {
                let q = task.evaluate(&mut state, &seg.hypers)?;
                curve.push(t, q).expect("increasing uniform steps");
            }
        }
    }
    let final_hypers = schedule.final_hypers().expect("validated non-empty");
    let final_q = task.evaluate(&mut state, final_hypers)?;
    let end = schedule.end();
    if end > 0 && end % eval_interval == 0 {
        curve.push(end, final_q).expect("increasing uniform steps");
    }
    Ok(Replay { curve, final_q })
}
