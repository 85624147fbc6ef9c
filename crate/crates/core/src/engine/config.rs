use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fire::FireConfig;
use crate::population::MutationSpec;
use crate::task::TaskSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "PBT")]
    Pbt,
    #[serde(rename = "FIREPBT")]
    FirePbt,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Rs => "RS",
            Mode::Pbt => "PBT",
            Mode::FirePbt => "FIREPBT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Truncation {
    pub bottom: f64,
    pub top: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { bottom: 0.25, top: 0.25 }
    }
}

/// Fixed relative schedule followed by every RS worker.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RsSchedule {
    #[default]
    Constant,
    /// Multiply every hyperparameter by `factor` at each milestone step.
    StepDecay { milestones: Vec<u64>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub workers: usize,
    /// FIRE sub-population sizes, greedy `P1` first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subpopulations: Vec<usize>,
    #[serde(default)]
    pub evaluators: usize,
    pub task: TaskSpec,
    pub mutation: MutationSpec,
    pub eval_interval: u64,
    pub ready_interval: u64,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub rs_schedule: RsSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fire: Option<FireConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn horizon(&self) -> u64 {
        self.task.horizon()
    }

    /// Number of population members (excludes evaluators).
    pub fn members(&self) -> usize {
        match self.mode {
            Mode::FirePbt => self.subpopulations.iter().sum(),
            _ => self.workers,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task.validate().map_err(|e| invalid("task", e.to_string()))?;
        self.mutation.validate().map_err(|e| invalid("mutation", e.to_string()))?;
        for name in self.task.trainable().hyper_names() {
            if !self.mutation.0.contains_key(*name) {
                return Err(invalid("mutation", format!("task needs hyperparameter `{name}`")));
            }
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(invalid("eval_interval", "must be at least 1"));
        }
        if self.ready_interval == 0 || self.ready_interval % self.eval_interval != 0 {
            return Err(invalid("ready_interval", "must be a positive multiple of eval_interval"));
        }
        if self.horizon() % self.ready_interval != 0 {
            return Err(invalid(
                "ready_interval",
                format!("task horizon {} is not a multiple of {}", self.horizon(), self.ready_interval),
            ));
        }
        let frac_ok = |f: f64| f > 0.0 && f <= 0.5;
        if !frac_ok(self.truncation.bottom) || !frac_ok(self.truncation.top) {
            return Err(invalid("truncation", "fractions must lie in (0, 0.5]"));
        }
        if let RsSchedule::StepDecay { milestones, factor } = &self.rs_schedule {
            if !(factor.is_finite() && *factor > 0.0) {
                return Err(invalid("rs_schedule.factor", "must be positive and finite"));
            }
            if milestones.iter().any(|m| m % self.ready_interval != 0 || *m == 0) {
                return Err(invalid("rs_schedule.milestones", "must be positive multiples of ready_interval"));
            }
        }
        match self.mode {
            Mode::Rs | Mode::Pbt => {
                if self.evaluators != 0 || !self.subpopulations.is_empty() {
                    return Err(invalid("evaluators", "only FIREPBT uses evaluators and sub-populations"));
                }
            }
            Mode::FirePbt => self.validate_fire()?,
        }
        Ok(())
    }

    fn validate_fire(&self) -> Result<(), ConfigError> {
        let fire = self.fire.as_ref().ok_or_else(|| invalid("fire", "required for FIREPBT"))?;
        fire.validate().map_err(|m| invalid("fire", m))?;
        let subs = &self.subpopulations;
        if subs.len() < 2 {
            return Err(invalid("subpopulations", "FIREPBT needs at least two sub-populations"));
        }
        if subs[0] == 0 || subs.iter().any(|&s| s != subs[0]) {
            return Err(invalid("subpopulations", "sizes must be equal and positive"));
        }
        if self.evaluators == 0 {
            return Err(invalid("evaluators", "FIREPBT needs at least one evaluator"));
        }
        let total = self.members() + self.evaluators;
        if total != self.workers {
            return Err(invalid(
                "workers",
                format!(
                    "sub-populations ({}) plus evaluators ({}) give {total}, not {}",
                    self.members(),
                    self.evaluators,
                    self.workers
                ),
            ));
        }
        if fire.min_steps_before_eval.len() > subs.len() - 1 {
            return Err(invalid("fire.min_steps_before_eval", "one entry per parent sub-population at most"));
        }
        if fire.eval_check_interval % self.ready_interval != 0 {
            return Err(invalid("fire.eval_check_interval", "must be a multiple of ready_interval"));
        }
        Ok(())
    }
}
