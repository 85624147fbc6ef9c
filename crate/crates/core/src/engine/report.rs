//! Summaries derived purely from an event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::lineage::extract_best_schedule;
use super::log::{Event, EventLog, Role};
use crate::schedule::{replay_schedule, Schedule, ScheduleError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub seed: u64,
    pub best_q: f64,
    pub best_step: u64,
    pub best_worker: u32,
    pub schedule: Schedule,
    pub replay_final_q: f64,
    pub best_so_far: Vec<SeriesPoint>,
}

/// Running maximum of the scores of the reported workers, one point per
/// barrier. FIRE PBT reports its greedy sub-population; other modes report
/// every member.
pub fn best_so_far(log: &EventLog) -> Vec<SeriesPoint> {
    let cfg = log.config();
    let roles = log.roles();
    let counted = |w: u32| match roles.get(w as usize) {
        Some((Role::Member, subpop)) => cfg.mode != Mode::FirePbt || *subpop == Some(1),
        _ => false,
    };
    let ready = cfg.ready_interval.max(1);
    let n = (cfg.horizon() / ready) as usize;
    // Per-barrier maxima; a score at step t counts from barrier ceil(t / ready).
    let mut per_barrier = vec![f64::NEG_INFINITY; n];
    for r in &log.records {
        if let Event::TrainEval { worker, q } = r.event {
            let b = (r.step.div_ceil(ready) as usize).max(1) - 1;
            if counted(worker) && b < n && q > per_barrier[b] {
                per_barrier[b] = q;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(n);
    for (i, m) in per_barrier.into_iter().enumerate() {
        best = best.max(m);
        out.push(SeriesPoint {
            step: (i as u64 + 1) * ready,
            q: best,
        });
    }
    out
}

pub fn build_report(log: &EventLog) -> Result<RunReport, ScheduleError> {
    let best = extract_best_schedule(log)?;
    let cfg = log.config();
    let replay = replay_schedule(&best.schedule, cfg.task.trainable(), cfg.seed, cfg.eval_interval)?;
    Ok(RunReport {
        mode: cfg.mode,
        seed: cfg.seed,
        best_q: best.best_q,
        best_step: best.best_step,
        best_worker: best.best_worker,
        schedule: best.schedule,
        replay_final_q: replay.final_q,
        best_so_far: best_so_far(log),
    })
}

/// Long-format `worker,step,q` table of every evaluation.
pub fn curves_csv(log: &EventLog) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["worker", "step", "q"]).expect("in-memory write");
    for r in &log.records {
        if let Event::TrainEval { worker, q } = r.event {
            w.write_record([worker.to_string(), r.step.to_string(), q.to_string()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn series_csv(series: &[SeriesPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "best_q"]).expect("in-memory write");
    for p in series {
        w.write_record([p.step.to_string(), p.q.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub mode: Mode,
    pub step: u64,
    pub runs: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median, minimum and maximum of the best-so-far series per mode and step.
pub fn aggregate(reports: &[RunReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(&str, u64), (Mode, Vec<f64>)> = BTreeMap::new();
    for r in reports {
        for p in &r.best_so_far {
            groups
                .entry((r.mode.as_str(), p.step))
                .or_insert_with(|| (r.mode, Vec::new()))
                .1
                .push(p.q);
        }
    }
    groups
        .into_iter()
        .map(|((_, step), (mode, mut qs))| AggregateRow {
            mode,
            step,
            runs: qs.len(),
            min: qs.iter().copied().fold(f64::INFINITY, f64::min),
            max: qs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            median: median(&mut qs),
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "step", "runs", "median", "min", "max"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            r.step.to_string(),
            r.runs.to_string(),
            r.median.to_string(),
            r.min.to_string(),
            r.max.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
