//! Retraces the hyperparameter schedule behind the best logged score by
//! following weight copies backward through the event log.

use serde::{Deserialize, Serialize};

use super::log::{Event, EventLog};
use crate::population::HyperParams;
use crate::schedule::{Schedule, ScheduleError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSchedule {
    pub best_q: f64,
    pub best_step: u64,
    pub best_worker: u32,
    pub schedule: Schedule,
}

struct Index {
    /// Per worker: (seq, step, hypers) whenever the worker's hypers were set.
    hypers: Vec<Vec<(u64, u64, HyperParams)>>,
    /// Per worker: (seq, step, source) whenever its weights were replaced.
    transfers: Vec<Vec<(u64, u64, u32)>>,
}

fn grow<T>(v: &mut Vec<Vec<T>>, w: u32) {
    if v.len() <= w as usize {
        v.resize_with(w as usize + 1, Vec::new);
    }
}

impl Index {
    fn build(log: &EventLog) -> Self {
        let mut idx = Index {
            hypers: Vec::new(),
            transfers: Vec::new(),
        };
        for r in &log.records {
            let mut hyper = |w: u32, h: &HyperParams| {
                grow(&mut idx.hypers, w);
                idx.hypers[w as usize].push((r.seq, r.step, h.clone()));
            };
            match &r.event {
                Event::WorkerInit { worker, hypers: Some(h), .. } => hyper(*worker, h),
                Event::Explore { worker, new, .. } => hyper(*worker, new),
                Event::HyperSet { worker, hypers } => hyper(*worker, hypers),
                Event::EvalAssign { evaluator, hypers, .. } => hyper(*evaluator, hypers),
                _ => {}
            }
            let transfer = match &r.event {
                Event::Exploit { loser, donor } => Some((*loser, *donor)),
                Event::EvalAssign { evaluator, parent, .. } => Some((*evaluator, *parent)),
                Event::EvalSuccess { evaluator, target, .. } => Some((*target, *evaluator)),
                _ => None,
            };
            if let Some((dst, src)) = transfer {
                grow(&mut idx.transfers, dst);
                idx.transfers[dst as usize].push((r.seq, r.step, src));
            }
        }
        idx
    }

    /// Hypers of `worker` in force at `step`, considering only events logged
    /// before `before_seq`.
    fn hypers_at(&self, worker: u32, step: u64, before_seq: u64) -> Option<&HyperParams> {
        self.hypers
            .get(worker as usize)?
            .iter()
            .rev()
            .find(|(seq, s, _)| *seq < before_seq && *s <= step)
            .map(|(_, _, h)| h)
    }

    fn last_transfer(&self, worker: u32, before_seq: u64) -> Option<(u64, u64, u32)> {
        self.transfers
            .get(worker as usize)?
            .iter()
            .rev()
            .find(|(seq, _, _)| *seq < before_seq)
            .copied()
    }
}

/// Finds the highest `train_eval` score and the schedule its weights were
/// trained under, from step 0 to the step of that score.
pub fn extract_best_schedule(log: &EventLog) -> Result<BestSchedule, ScheduleError> {
    let (best_seq, best_step, best_worker, best_q) = log
        .records
        .iter()
        .filter_map(|r| match r.event {
            Event::TrainEval { worker, q } => Some((r.seq, r.step, worker, q)),
            _ => None,
        })
        .fold(None::<(u64, u64, u32, f64)>, |best, cur| match best {
            Some(b) if b.3 >= cur.3 => Some(b),
            _ => Some(cur),
        })
        .ok_or(ScheduleError::EmptyLog)?;

    let ready = log.config().ready_interval.max(1);
    let idx = Index::build(log);
    let broken = |msg: String| ScheduleError::BrokenLineage(msg);

    let eval_hypers = idx
        .hypers_at(best_worker, best_step, best_seq)
        .ok_or_else(|| broken(format!("worker {best_worker} has no hypers at step {best_step}")))?
        .clone();

    let mut reversed: Vec<(u64, u64, HyperParams)> = Vec::new();
    let (mut worker, mut seq, mut step) = (best_worker, best_seq, best_step);
    loop {
        let transfer = idx.last_transfer(worker, seq);
        let origin = transfer.map_or(0, |t| t.1);
        let mut a = step;
        while a > origin {
            let start = a.saturating_sub(ready).max(origin);
            let h = idx
                .hypers_at(worker, start, seq)
                .ok_or_else(|| broken(format!("worker {worker} has no hypers at step {start}")))?;
            reversed.push((start, a, h.clone()));
            a = start;
        }
        match transfer {
            Some((t_seq, t_step, src)) => {
                worker = src;
                seq = t_seq;
                step = t_step;
            }
            None => break,
        }
    }

    let mut schedule = Schedule::default();
    for (start, end, h) in reversed.into_iter().rev() {
        schedule.push(start, end, h);
    }
    if schedule.final_hypers() != Some(&eval_hypers) {
        schedule.push(best_step, best_step, eval_hypers);
    }
    schedule.validate()?;
    Ok(BestSchedule {
        best_q,
        best_step,
        best_worker,
        schedule,
    })
}
