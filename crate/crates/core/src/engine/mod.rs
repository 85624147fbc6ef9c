//! Synchronous experiment driver for RS, PBT and FIRE PBT.
//!
//! Between barriers every active worker trains `ready_interval` steps, in
//! parallel, scoring every `eval_interval` steps. At each barrier the
//! coordinator applies, in this order: greedy evolution (P1, or the whole
//! population under PBT), parent fitness and evolution for P2..Pn, evaluator
//! invalidation, evaluator checks, and assignment of idle evaluators. No
//! lifecycle step runs at the final barrier.

pub mod config;
pub mod lineage;
pub mod log;
pub mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{CheckpointError, CheckpointRef, CheckpointStore};
use crate::curve::{CachedSmoother, GpSmoother, TrainingCurve};
use crate::fire::{
    check_evaluator, compute_parent_fitness, on_evolution_event, select_parent, select_target, Assignment,
    CheckOutcome, ChildCandidate, FireConfig, ParentCandidate, StopReason,
};
use crate::population::{explore, sample_initial_hypers, truncation_select, HyperParams};
use crate::task::{TaskError, TaskState, Trainable};

pub use config::{ConfigError, ExperimentConfig, Mode, RsSchedule, Truncation};
pub use lineage::{extract_best_schedule, BestSchedule};
pub use log::{Event, EventLog, Record, Role};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task failed: {0}")]
    Task(#[from] TaskError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A run that aborted part-way, with everything logged up to that point.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EngineError,
    pub partial: EventLog,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads for the training phase; 0 picks the rayon default.
    pub threads: usize,
}

/// 32-byte seed for an independent stream, derived from the master seed.
pub fn derive_seed(master: u64, tag: &str, worker: u32, step: u64, salt: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(worker.to_le_bytes());
    h.update(step.to_le_bytes());
    h.update(salt.to_le_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, Copy)]
struct EvalLink {
    parent: u32,
    target: u32,
    start: u64,
}

struct Slot {
    id: u32,
    /// 1-based sub-population for members, `None` for evaluators.
    subpop: Option<usize>,
    hypers: Option<HyperParams>,
    state: TaskState,
    checkpoint: CheckpointRef,
    fitness: Option<f64>,
    latest_q: Option<f64>,
    curve: TrainingCurve,
    last_evolution_step: u64,
    last_evaluated_step: u64,
    /// Bumped whenever the slot's weights are replaced.
    lineage: u64,
    link: Option<EvalLink>,
}

impl Slot {
    fn active(&self) -> bool {
        self.subpop.is_some() || self.link.is_some()
    }
}

struct Engine<'a> {
    cfg: &'a ExperimentConfig,
    task: &'a dyn Trainable,
    slots: Vec<Slot>,
    store: CheckpointStore,
    log: EventLog,
    coord_rng: ChaCha8Rng,
    smoother: CachedSmoother<GpSmoother>,
    step: u64,
}

/// Runs `cfg` to the task horizon and returns the complete event log.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<EventLog, Box<RunFailure>> {
    let fail = |error: EngineError, partial: EventLog| Box::new(RunFailure { error, partial });
    if let Err(e) = cfg.validate() {
        return Err(fail(e.into(), EventLog::new(cfg)));
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(opts.threads).build() {
        Ok(p) => p,
        Err(e) => return Err(fail(EngineError::ThreadPool(e.to_string()), EventLog::new(cfg))),
    };
    let mut engine = Engine::new(cfg);
    match pool.install(|| engine.run()) {
        Ok(()) => Ok(engine.log),
        Err(e) => Err(fail(e, engine.log)),
    }
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            task: cfg.task.trainable(),
            slots: Vec::new(),
            store: CheckpointStore::new(),
            log: EventLog::new(cfg),
            coord_rng: ChaCha8Rng::from_seed(derive_seed(cfg.seed, "coordinator", 0, 0, 0)),
            smoother: CachedSmoother::new(GpSmoother),
            step: 0,
        }
    }

    fn fire(&self) -> &'a FireConfig {
        self.cfg.fire.as_ref().expect("validated FIRE config")
    }

    fn members(&self) -> usize {
        self.cfg.members()
    }

    fn run(&mut self) -> Result<(), EngineError> {
        self.init()?;
        if self.cfg.mode == Mode::FirePbt {
            self.assign_idle()?;
        }
        let horizon = self.cfg.horizon();
        while self.step < horizon {
            self.train_phase()?;
            if self.step == horizon {
                break;
            }
            self.smoother.clear();
            match self.cfg.mode {
                Mode::Rs => self.rs_schedule_step()?,
                Mode::Pbt => {
                    let ids: Vec<u32> = (0..self.members() as u32).collect();
                    self.evolve(&ids)?;
                }
                Mode::FirePbt => self.fire_barrier()?,
            }
        }
        Ok(())
    }

    fn fresh_stream(&self, id: u32, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(derive_seed(self.cfg.seed, "stream", id, self.step, salt))
    }

    fn init(&mut self) -> Result<(), EngineError> {
        let m = self.members();
        let sub_size = self.cfg.subpopulations.first().copied().unwrap_or(m).max(1);
        for id in 0..self.cfg.workers as u32 {
            let is_member = (id as usize) < m;
            let subpop = is_member.then(|| match self.cfg.mode {
                Mode::FirePbt => id as usize / sub_size + 1,
                _ => 1,
            });
            let hypers = is_member.then(|| {
                let mut rng = ChaCha8Rng::from_seed(derive_seed(self.cfg.seed, "init", id, 0, 0));
                sample_initial_hypers(&self.cfg.mutation, &mut rng)
            });
            let state = self.task.init_state(self.fresh_stream(id, 0));
            let checkpoint = self.store.put(&state.snapshot());
            self.log.push(
                0,
                Event::WorkerInit {
                    worker: id,
                    role: if is_member { Role::Member } else { Role::Evaluator },
                    subpop,
                    hypers: hypers.clone(),
                },
            );
            self.slots.push(Slot {
                id,
                subpop,
                hypers,
                state,
                checkpoint,
                fitness: None,
                latest_q: None,
                curve: TrainingCurve::new(0),
                last_evolution_step: 0,
                last_evaluated_step: 0,
                lineage: 0,
                link: None,
            });
        }
        for i in 0..m {
            self.record_origin(i)?;
        }
        Ok(())
    }

    /// Scores slot `i` at the current step as the first point of a new curve.
    fn record_origin(&mut self, i: usize) -> Result<f64, EngineError> {
        let step = self.step;
        let slot = &mut self.slots[i];
        let hypers = slot.hypers.as_ref().expect("active slot has hypers");
        let q = self.task.evaluate(&mut slot.state, hypers)?;
        slot.curve.reset(step);
        slot.curve.push(step, q).expect("finite score at origin");
        slot.latest_q = Some(q);
        if self.cfg.mode != Mode::FirePbt || slot.subpop == Some(1) {
            slot.fitness = Some(q);
        }
        self.log.push(step, Event::TrainEval { worker: slot.id, q });
        self.refresh_checkpoint(i);
        Ok(q)
    }

    fn refresh_checkpoint(&mut self, i: usize) {
        let blob = self.slots[i].state.snapshot();
        let new = self.store.put(&blob);
        let old = std::mem::replace(&mut self.slots[i].checkpoint, new);
        self.store.release(&old).expect("slot holds a live reference");
    }

    /// Replaces slot `dst`'s weights with the checkpoint `src`. The copy gets
    /// a fresh noise stream so that branches diverge.
    fn transfer(&mut self, dst: usize, src: CheckpointRef) -> Result<(), EngineError> {
        let copied = self.store.copy(&src)?;
        let blob = self.store.get(&copied)?;
        let old = std::mem::replace(&mut self.slots[dst].checkpoint, copied);
        self.store.release(&old)?;
        let slot = &mut self.slots[dst];
        slot.lineage += 1;
        let mut state = TaskState::restore(&blob)?;
        state.rng = ChaCha8Rng::from_seed(derive_seed(self.cfg.seed, "stream", slot.id, self.step, slot.lineage));
        slot.state = state;
        Ok(())
    }

    fn train_phase(&mut self) -> Result<(), EngineError> {
        let (task, eval_iv, ready) = (self.task, self.cfg.eval_interval, self.cfg.ready_interval);
        let start = self.step;
        let results: Vec<Result<Vec<(u64, f64)>, TaskError>> = self
            .slots
            .par_iter_mut()
            .map(|slot| {
                if !slot.active() {
                    return Ok(Vec::new());
                }
                let hypers = slot.hypers.as_ref().expect("active slot has hypers");
                let mut out = Vec::with_capacity((ready / eval_iv) as usize);
                let mut t = start;
                while t < start + ready {
                    task.train_steps(&mut slot.state, hypers, eval_iv)?;
                    t += eval_iv;
                    out.push((t, task.evaluate(&mut slot.state, hypers)?));
                }
                Ok(out)
            })
            .collect();
        self.step = start + ready;
        for (i, res) in results.into_iter().enumerate() {
            let points = res?;
            if points.is_empty() {
                continue;
            }
            for &(t, q) in &points {
                self.slots[i].curve.push(t, q).expect("uniform evaluation cadence");
                self.log.push(t, Event::TrainEval { worker: self.slots[i].id, q });
            }
            let q = points.last().expect("non-empty").1;
            let slot = &mut self.slots[i];
            slot.latest_q = Some(q);
            if slot.subpop.is_some() && (self.cfg.mode != Mode::FirePbt || slot.subpop == Some(1)) {
                slot.fitness = Some(q);
            }
            self.refresh_checkpoint(i);
        }
        Ok(())
    }

    fn rs_schedule_step(&mut self) -> Result<(), EngineError> {
        let RsSchedule::StepDecay { milestones, factor } = &self.cfg.rs_schedule else {
            return Ok(());
        };
        if !milestones.contains(&self.step) {
            return Ok(());
        }
        for i in 0..self.members() {
            let h = self.slots[i].hypers.as_ref().expect("member hypers").scaled(*factor);
            self.log.push(
                self.step,
                Event::HyperSet {
                    worker: self.slots[i].id,
                    hypers: h.clone(),
                },
            );
            self.slots[i].hypers = Some(h);
        }
        Ok(())
    }

    /// Truncation selection among `ids` that have a fitness, followed by
    /// exploit and explore for every loser. Returns the losers.
    fn evolve(&mut self, ids: &[u32]) -> Result<Vec<u32>, EngineError> {
        let ranked: Vec<(u32, f64)> = ids
            .iter()
            .filter_map(|&id| self.slots[id as usize].fitness.map(|f| (id, f)))
            .collect();
        let t = self.cfg.truncation;
        let pairs = truncation_select(&ranked, t.bottom, t.top, &mut self.coord_rng);
        let mut losers = Vec::with_capacity(pairs.len());
        for (loser, donor) in pairs {
            let (l, d) = (loser as usize, donor as usize);
            self.log.push(self.step, Event::Exploit { loser, donor });
            self.transfer(l, self.slots[d].checkpoint)?;
            let old = self.slots[d].hypers.clone().expect("donor hypers");
            let new = explore(&old, &self.cfg.mutation, &mut self.coord_rng);
            self.log.push(
                self.step,
                Event::Explore {
                    worker: loser,
                    old,
                    new: new.clone(),
                },
            );
            let slot = &mut self.slots[l];
            slot.hypers = Some(new);
            slot.last_evolution_step = self.step;
            slot.fitness = None;
            self.record_origin(l)?;
            losers.push(loser);
        }
        Ok(losers)
    }

    fn assignments(&self) -> Vec<Assignment> {
        self.slots
            .iter()
            .filter_map(|s| {
                s.link.map(|l| Assignment {
                    evaluator: s.id,
                    parent: l.parent,
                    target: l.target,
                })
            })
            .collect()
    }

    fn subpop_ids(&self, k: usize) -> Vec<u32> {
        self.slots
            .iter()
            .filter(|s| s.subpop == Some(k))
            .map(|s| s.id)
            .collect()
    }

    fn fire_barrier(&mut self) -> Result<(), EngineError> {
        let n_sub = self.cfg.subpopulations.len();
        let mut exploited = self.evolve(&self.subpop_ids(1))?;
        for k in 2..=n_sub {
            self.update_parent_fitness(k);
            exploited.extend(self.evolve(&self.subpop_ids(k))?);
        }
        for member in exploited {
            for e in on_evolution_event(member, &self.assignments()) {
                self.stop_evaluator(e as usize, StopReason::Evolution);
            }
        }
        self.check_evaluators()?;
        self.assign_idle()
    }

    fn update_parent_fitness(&mut self, k: usize) {
        let links: Vec<(u32, usize)> = self
            .slots
            .iter()
            .filter_map(|s| s.link.map(|l| (l.parent, s.id as usize)))
            .filter(|&(p, e)| self.slots[p as usize].subpop == Some(k) && !self.slots[e].curve.is_empty())
            .collect();
        if links.is_empty() {
            return;
        }
        let curves: Vec<(u32, &TrainingCurve)> = links.iter().map(|&(p, e)| (p, &self.slots[e].curve)).collect();
        let fitness = compute_parent_fitness(&curves, &self.smoother);
        for (member, value) in fitness {
            self.slots[member as usize].fitness = Some(value);
            self.log.push(self.step, Event::FitnessUpdate { worker: member, value });
        }
    }

    fn stop_evaluator(&mut self, e: usize, reason: StopReason) {
        let Some(link) = self.slots[e].link.take() else {
            return;
        };
        self.slots[e].hypers = None;
        self.slots[link.parent as usize].last_evaluated_step = self.step;
        self.log.push(
            self.step,
            Event::EvalStop {
                evaluator: e as u32,
                reason,
                t: self.step - link.start,
            },
        );
    }

    fn check_evaluators(&mut self) -> Result<(), EngineError> {
        let fire = self.fire();
        let due: Vec<(usize, EvalLink)> = self
            .slots
            .iter()
            .filter_map(|s| s.link.map(|l| (s.id as usize, l)))
            .filter(|(_, l)| {
                let t = self.step - l.start;
                t > 0 && t % fire.eval_check_interval == 0
            })
            .collect();
        let checks: Vec<(CheckOutcome, u64)> = due
            .par_iter()
            .map(|&(e, l)| {
                let target = &self.slots[l.target as usize];
                let (outcome, _) = check_evaluator(
                    &self.slots[e].curve,
                    &target.curve,
                    self.step - l.start,
                    fire,
                    &self.smoother,
                );
                (outcome, target.lineage)
            })
            .collect();
        for ((e, link), (outcome, seen_lineage)) in due.into_iter().zip(checks) {
            match outcome {
                CheckOutcome::Continue => {}
                CheckOutcome::Stop(reason) => self.stop_evaluator(e, reason),
                CheckOutcome::Succeed { score_diff, p } => {
                    let tgt = link.target as usize;
                    if self.slots[tgt].lineage != seen_lineage {
                        self.stop_evaluator(e, StopReason::StaleTarget);
                        continue;
                    }
                    self.log.push(
                        self.step,
                        Event::EvalSuccess {
                            evaluator: e as u32,
                            target: link.target,
                            score_diff,
                            p,
                        },
                    );
                    self.transfer(tgt, self.slots[e].checkpoint)?;
                    if self.slots[tgt].subpop != Some(1) {
                        self.slots[tgt].fitness = None;
                    }
                    self.record_origin(tgt)?;
                    self.slots[e].link = None;
                    self.slots[e].hypers = None;
                    self.slots[link.parent as usize].last_evaluated_step = self.step;
                }
            }
        }
        Ok(())
    }

    fn assign_idle(&mut self) -> Result<(), EngineError> {
        let fire = self.fire();
        let n_sub = self.cfg.subpopulations.len();
        let idle: Vec<usize> = (self.members()..self.slots.len())
            .filter(|&e| self.slots[e].link.is_none())
            .collect();
        for e in idle {
            let busy: Vec<u32> = self.assignments().iter().map(|a| a.parent).collect();
            let candidates: Vec<ParentCandidate> = self.slots[..self.members()]
                .iter()
                .filter(|s| s.subpop.is_some_and(|k| k >= 2 && k <= n_sub))
                .map(|s| ParentCandidate {
                    id: s.id,
                    steps_trained: self.step,
                    min_steps: fire.min_steps_for(s.subpop.expect("member")),
                    staleness: self.step - s.last_evaluated_step.max(s.last_evolution_step),
                    has_evaluator: busy.contains(&s.id),
                })
                .collect();
            let Some(parent) = select_parent(&candidates) else {
                break;
            };
            let child_pop = self.slots[parent as usize].subpop.expect("member") - 1;
            let children: Vec<ChildCandidate> = self
                .subpop_ids(child_pop)
                .into_iter()
                .map(|id| ChildCandidate {
                    id,
                    fitness: self.slots[id as usize].fitness,
                    latest_q: self.slots[id as usize].latest_q,
                })
                .collect();
            let Some(target) = select_target(&children) else {
                break;
            };
            let hypers = self.slots[target as usize].hypers.clone().expect("member hypers");
            self.log.push(
                self.step,
                Event::EvalAssign {
                    evaluator: e as u32,
                    parent,
                    target,
                    hypers: hypers.clone(),
                },
            );
            self.transfer(e, self.slots[parent as usize].checkpoint)?;
            self.slots[e].hypers = Some(hypers);
            self.slots[e].link = Some(EvalLink {
                parent,
                target,
                start: self.step,
            });
            self.record_origin(e)?;
        }
        Ok(())
    }
}
