//! JSON-lines event log. The first line is a header carrying the schema
//! version and the full config; every later line is one [`Record`].

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ExperimentConfig, Mode};
use crate::fire::StopReason;
use crate::population::HyperParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event log schema version {found} is not supported (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("event log has no header line")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Member,
    Evaluator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    WorkerInit {
        worker: u32,
        role: Role,
        /// 1-based sub-population index; 1 for every member outside FIRE.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subpop: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hypers: Option<HyperParams>,
    },
    TrainEval {
        worker: u32,
        q: f64,
    },
    Exploit {
        loser: u32,
        donor: u32,
    },
    Explore {
        worker: u32,
        old: HyperParams,
        new: HyperParams,
    },
    /// Hypers changed by a fixed schedule rather than by evolution.
    HyperSet {
        worker: u32,
        hypers: HyperParams,
    },
    FitnessUpdate {
        worker: u32,
        value: f64,
    },
    EvalAssign {
        evaluator: u32,
        parent: u32,
        target: u32,
        hypers: HyperParams,
    },
    EvalStop {
        evaluator: u32,
        reason: StopReason,
        #[serde(rename = "T")]
        t: u64,
    },
    EvalSuccess {
        evaluator: u32,
        target: u32,
        score_diff: f64,
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: u64,
    pub step: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub event: String,
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: Header,
    pub records: Vec<Record>,
}

impl EventLog {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            header: Header {
                event: "header".into(),
                schema_version: SCHEMA_VERSION,
                mode: config.mode,
                seed: config.seed,
                config: config.clone(),
            },
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, step: u64, event: Event) {
        let seq = self.records.len() as u64;
        self.records.push(Record { seq, step, event });
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.header.config
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json writes UTF-8")
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, LogError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(LogError::MissingHeader)?;
        let probe: serde_json::Value = serde_json::from_str(first).map_err(|e| LogError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if probe.get("event").and_then(|v| v.as_str()) != Some("header") {
            return Err(LogError::MissingHeader);
        }
        let found = probe.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != SCHEMA_VERSION {
            return Err(LogError::SchemaVersion { found });
        }
        let header: Header = serde_json::from_value(probe).map_err(|e| LogError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let records = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| LogError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<Record>, _>>()?;
        Ok(Self { header, records })
    }

    /// Role and sub-population of each worker, indexed by worker id.
    pub fn roles(&self) -> Vec<(Role, Option<usize>)> {
        let mut out = Vec::new();
        for r in &self.records {
            if let Event::WorkerInit { worker, role, subpop, .. } = &r.event {
                let w = *worker as usize;
                if out.len() <= w {
                    out.resize(w + 1, (Role::Member, None));
                }
                out[w] = (*role, *subpop);
            }
        }
        out
    }
}
