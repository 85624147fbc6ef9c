//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or validation error.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::curve::{best_score_diff, binom_test_curves, CurveComparison, TrainingCurve};
use crate::engine::config::ExperimentConfig;
use crate::engine::report::{aggregate, aggregate_csv, build_report, curves_csv, median, series_csv, RunReport};
use crate::engine::{extract_best_schedule, run_experiment, EventLog, RunOptions};
use crate::schedule::{replay_schedule, Schedule};
use crate::task::TaskSpec;

#[derive(Parser, Debug)]
#[command(name = "firepbt", version, about = "PBT and FIRE PBT on simulated training tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment and write events.jsonl, report.json and curves.csv.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Compare two `step,score` CSV curves.
    CompareCurves { a: PathBuf, b: PathBuf },
    /// Extract the best schedule from a log and retrain it from scratch.
    Replay {
        events: PathBuf,
        /// Task to replay under instead of the one recorded in the log.
        #[arg(long)]
        task_config: Option<PathBuf>,
    },
    /// Summarise one or more logs.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    match cmd {
        Command::Run { config, seed, out_dir } => cmd_run(&config, seed, &out_dir),
        Command::CompareCurves { a, b } => cmd_compare_curves(&a, &b),
        Command::Replay { events, task_config } => cmd_replay(&events, task_config.as_deref()),
        Command::Report { logs, out_dir } => cmd_report(&logs, out_dir.as_deref()),
    }
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out_dir: &Path) -> Result<String, CliError> {
    let text = read(config)?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", out_dir.display())))?;
    let events_path = out_dir.join("events.jsonl");
    let log = match run_experiment(&cfg, &RunOptions::default()) {
        Ok(log) => log,
        Err(f) => {
            write(&events_path, &f.partial.to_jsonl())?;
            return Err(CliError::Runtime(format!("run aborted: {}", f.error)));
        }
    };
    write(&events_path, &log.to_jsonl())?;
    write(&out_dir.join("curves.csv"), &curves_csv(&log))?;
    let report = build_report(&log).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(&out_dir.join("report.json"), &(to_json(&report) + "\n"))?;
    log::info!("best q {} at step {}", report.best_q, report.best_step);
    Ok(format!("{}\n", out_dir.display()))
}

/// Reads a `step,score` CSV into a curve starting at its first step.
pub fn read_curve_csv(path: &Path) -> Result<TrainingCurve, CliError> {
    let bad = |msg: String| CliError::Usage(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() != 2 || headers.get(0).map(str::trim) != Some("step") || headers.get(1).map(str::trim) != Some("score") {
        return Err(bad("header must be `step,score`".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| bad(format!("row {row}: {e}")))?;
        let step: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|e| bad(format!("row {row}: step `{}`: {e}", &rec[0])))?;
        let score: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| bad(format!("row {row}: score `{}`: {e}", &rec[1])))?;
        rows.push((row, step, score));
    }
    let origin = rows.first().map_or(0, |r| r.1);
    let mut curve = TrainingCurve::new(origin);
    for (row, step, score) in rows {
        curve.push(step, score).map_err(|e| bad(format!("row {row}: {e}")))?;
    }
    if curve.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(curve)
}

pub fn compare(a: &TrainingCurve, b: &TrainingCurve) -> Result<CurveComparison, CliError> {
    let mut cmp = best_score_diff(a, b).map_err(|e| CliError::Usage(e.to_string()))?;
    cmp.p_value = binom_test_curves(a, b);
    Ok(cmp)
}

pub fn cmd_compare_curves(a: &Path, b: &Path) -> Result<String, CliError> {
    let (ca, cb) = (read_curve_csv(a)?, read_curve_csv(b)?);
    Ok(serde_json::to_string(&compare(&ca, &cb)?).expect("serializes") + "\n")
}

fn load_log(path: &Path) -> Result<EventLog, CliError> {
    EventLog::parse_jsonl(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
struct ReplayOutput {
    best_q_logged: f64,
    schedule: Schedule,
    replay_final_q: f64,
}

pub fn cmd_replay(events: &Path, task_config: Option<&Path>) -> Result<String, CliError> {
    let log = load_log(events)?;
    let task = match task_config {
        Some(p) => {
            let spec: TaskSpec = serde_json::from_str(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            spec.validate().map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            spec
        }
        None => log.config().task.clone(),
    };
    let best = extract_best_schedule(&log).map_err(|e| CliError::Runtime(e.to_string()))?;
    let cfg = log.config();
    let replay = replay_schedule(&best.schedule, task.trainable(), cfg.seed, cfg.eval_interval)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(to_json(&ReplayOutput {
        best_q_logged: best.best_q,
        schedule: best.schedule,
        replay_final_q: replay.final_q,
    }) + "\n")
}

pub fn cmd_report(logs: &[PathBuf], out_dir: Option<&Path>) -> Result<String, CliError> {
    let mut reports: Vec<(String, RunReport)> = Vec::new();
    for p in logs {
        let log = load_log(p)?;
        let r = build_report(&log).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "log".into());
        reports.push((stem, r));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        for (i, (stem, r)) in reports.iter().enumerate() {
            write(&dir.join(format!("series_{i}_{stem}.csv")), &series_csv(&r.best_so_far))?;
        }
        let all: Vec<RunReport> = reports.iter().map(|r| r.1.clone()).collect();
        write(&dir.join("aggregate.csv"), &aggregate_csv(&aggregate(&all)))?;
    }
    let mut out = String::from("log,mode,seed,best_q,replay_q\n");
    for (i, (stem, r)) in reports.iter().enumerate() {
        let _ = writeln!(out, "{i}_{stem},{},{},{},{}", r.mode.as_str(), r.seed, r.best_q, r.replay_final_q);
    }
    out.push_str("\nmode,runs,median_final_best_q,min_final_best_q,max_final_best_q,median_replay_q\n");
    let mut modes: Vec<&str> = reports.iter().map(|r| r.1.mode.as_str()).collect();
    modes.sort();
    modes.dedup();
    for m in modes {
        let rs: Vec<&RunReport> = reports.iter().map(|r| &r.1).filter(|r| r.mode.as_str() == m).collect();
        let mut finals: Vec<f64> = rs.iter().filter_map(|r| r.best_so_far.last().map(|p| p.q)).collect();
        let mut replays: Vec<f64> = rs.iter().map(|r| r.replay_final_q).collect();
        let lo = finals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "{m},{},{},{lo},{hi},{}",
            rs.len(),
            median(&mut finals),
            median(&mut replays)
        );
    }
    Ok(out)
}

/// Installs the logger, honouring `FIREPBT_LOG_LEVEL`.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("FIREPBT_LOG_LEVEL", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
}

pub fn main_exit_code() -> i32 {
    init_logging();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let code = run_cli(std::env::args_os(), &mut lock);
    let _ = lock.flush();
    code
}
