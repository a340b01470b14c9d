//! File formats and command plumbing around `qosim-core`: JSON scenario
//! files, line-delimited JSON traces, the per-tick CSV and run summaries.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use qosim_core::runtime::{run_simulation_loop, Policy, RunOutput, RuntimeError, Summary, TraceBody, TraceRecord};
use qosim_core::scenario::ScenarioError;
use qosim_core::Scenario;

pub use qosim_core;

pub const TRACE_FORMAT: &str = "qosim-trace";
pub const TRACE_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 6] = ["time_ms", "overall_qos", "intrinsic", "contextual", "config_id", "in_flight"];

pub const TRACE_FILE: &str = "trace.jsonl";
pub const TICKS_FILE: &str = "ticks.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("reference error: unknown {kind} `{id}` referenced by {by}")]
    Reference { kind: String, id: String, by: String },
    #[error("constraint error: {0}")]
    Constraint(String),
    #[error("trace error: {0}")]
    Trace(String),
    #[error("runtime error: {0}")]
    Runtime(#[from] RuntimeError),
}

impl From<ScenarioError> for FileError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Reference { kind, id, by } => FileError::Reference { kind, id, by },
            ScenarioError::Constraint(msg) => FileError::Constraint(msg),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FileError + '_ {
    move |source| FileError::Io { path: path.to_path_buf(), source }
}

fn syntax(e: &serde_json::Error) -> FileError {
    FileError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
}

/// Parses and fully validates a scenario. Omitted routes of the default
/// configuration come back filled in.
pub fn parse_scenario(text: &str) -> Result<Scenario, FileError> {
    let mut scenario: Scenario = serde_json::from_str(text).map_err(|e| syntax(&e))?;
    let (_, cfg) = scenario.compile()?;
    scenario.default_configuration = cfg;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, FileError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_scenario(&text)
}

pub fn scenario_to_json(scenario: &Scenario) -> String {
    let mut s = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    s.push('\n');
    s
}

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub dt_ms: u64,
    pub horizon_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix_ms: Option<u64>,
}

impl TraceHeader {
    pub fn new(scenario: &Scenario, policy: Policy, timestamp: bool) -> Self {
        let generated_at_unix_ms =
            timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0));
        Self {
            format: String::from(TRACE_FORMAT),
            version: TRACE_VERSION,
            scenario: scenario.name.clone(),
            policy,
            seed: scenario.parameters.seed,
            dt_ms: scenario.parameters.dt_ms,
            horizon_ms: scenario.parameters.horizon_ms,
            generated_at_unix_ms,
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, header: &TraceHeader, records: &[TraceRecord]) -> io::Result<()> {
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> Result<(TraceHeader, Vec<TraceRecord>), FileError> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let header_err = || FileError::Trace(String::from("missing trace header"));
    let (_, first) = lines.next().ok_or_else(header_err)?;
    let first = first.map_err(|e| FileError::Trace(e.to_string()))?;
    let header: TraceHeader = serde_json::from_str(&first).map_err(|e| FileError::Trace(format!("line 1: {e}")))?;
    if header.format != TRACE_FORMAT {
        return Err(header_err());
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| FileError::Trace(e.to_string()))?;
        let rec = serde_json::from_str(&line).map_err(|e| FileError::Trace(format!("line {}: {e}", i + 1)))?;
        records.push(rec);
    }
    Ok((header, records))
}

pub fn load_trace(path: &Path) -> Result<(TraceHeader, Vec<TraceRecord>), FileError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    read_trace(io::BufReader::new(f))
}

/// One row per QoS sample.
pub fn write_ticks_csv<W: Write>(w: W, records: &[TraceRecord]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        if let TraceBody::QosSample { intrinsic, contextual, config_id, in_flight } = &r.body {
            out.write_record([
                r.at.to_string(),
                r.overall.to_string(),
                intrinsic.to_string(),
                contextual.to_string(),
                config_id.clone(),
                u8::from(*in_flight).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: Summary,
}

impl RunSummary {
    pub fn from_trace(header: &TraceHeader, records: &[TraceRecord]) -> Self {
        Self {
            scenario: header.scenario.clone(),
            policy: header.policy,
            seed: header.seed,
            summary: Summary::from_records(records),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub policy: Policy,
    pub seed: Option<u64>,
    pub timestamp: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { policy: Policy::Heuristic, seed: None, timestamp: true }
    }
}

/// Runs a scenario and writes trace, per-tick CSV and summary into `out`.
pub fn run_scenario(scenario: &Scenario, out: &Path, opts: &RunOptions) -> Result<(RunOutput, RunSummary), FileError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.parameters.seed = seed;
    }
    let output = run_simulation_loop(&scenario, opts.policy)?;
    let header = TraceHeader::new(&scenario, opts.policy, opts.timestamp);
    let summary = RunSummary::from_trace(&header, &output.trace);

    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(TRACE_FILE);
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    write_trace(io::BufWriter::new(f), &header, &output.trace).map_err(io_err(&path))?;

    let path = out.join(TICKS_FILE);
    let f = fs::File::create(&path).map_err(io_err(&path))?;
    write_ticks_csv(io::BufWriter::new(f), &output.trace)
        .map_err(|e| FileError::Io { path: path.clone(), source: io::Error::other(e) })?;

    let path = out.join(SUMMARY_FILE);
    fs::write(&path, summary.to_json()).map_err(io_err(&path))?;
    Ok((output, summary))
}
