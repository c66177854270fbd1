//! Report JSON, solution CSV, and the error record, all written atomically.

use std::io::Write;
use std::path::Path;

use hessquot_core::grid::GridFunction;
use hessquot_core::solver::{HomotopyParams, NewtonParams, ProblemSpec, SolveReport, StageRecord};
use hessquot_core::verify::{DiagnosticsReport, SuiteResult};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::config::{Config, ConfigError, SCHEMA_VERSION};

#[derive(Debug, Serialize)]
pub struct Versions {
    pub hessquot: &'static str,
    pub schema: u32,
}

const VERSIONS: Versions = Versions { hessquot: env!("CARGO_PKG_VERSION"), schema: SCHEMA_VERSION };

#[derive(Debug, Serialize)]
pub struct Report {
    /// The effective configuration after overrides.
    pub spec: Config,
    /// Solver parameters after defaults are filled in.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<Parameters>,
    pub stages: Vec<StageRecord>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub converged: bool,
    pub versions: Versions,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suites: Option<Vec<SuiteResult>>,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct Parameters {
    pub newton: NewtonParams,
    pub homotopy: HomotopyParams,
}

impl Report {
    pub fn solve(cfg: &Config, prob: &ProblemSpec, r: &SolveReport, max_error: Option<f64>, failure: Option<String>) -> Report {
        Report {
            spec: cfg.clone(),
            parameters: Some(Parameters { newton: prob.newton, homotopy: prob.homotopy }),
            stages: r.stages.clone(),
            diagnostics: r.diagnostics.clone(),
            converged: r.converged,
            versions: VERSIONS,
            warnings: r.warnings.clone(),
            max_error,
            failure,
            suites: None,
            wall_time_s: r.wall_time_s,
        }
    }

    pub fn selftest(cfg: &Config, suites: Vec<SuiteResult>, passed: bool, wall_time_s: f64) -> Report {
        Report {
            spec: cfg.clone(),
            parameters: None,
            stages: Vec::new(),
            diagnostics: None,
            converged: passed,
            versions: VERSIONS,
            warnings: Vec::new(),
            max_error: None,
            failure: None,
            suites: Some(suites),
            wall_time_s,
        }
    }

    pub fn write(&self, cfg: &Config) -> std::io::Result<()> {
        let Some(path) = cfg.out.report.as_deref() else { return Ok(()) };
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `i,j[,k],x1,x2[,x3],u`, one row per node in row-major order. Floats use
/// the shortest representation that round-trips.
pub fn csv_bytes(u: &GridFunction) -> Vec<u8> {
    let g = u.grid();
    let n = g.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["i", "j", "k"][..n].iter().map(|s| s.to_string()).collect();
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.push("u".into());
    w.write_record(&header).expect("in-memory write");
    for node in 0..g.node_count() {
        let mut row: Vec<String> = g.multi(node).iter().map(|i| i.to_string()).collect();
        row.extend(g.coords(node).iter().map(|x| x.to_string()));
        row.push(u.get(node).to_string());
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv(u: &GridFunction, path: Option<&Path>) -> std::io::Result<()> {
    match path {
        Some(p) => write_atomic(p, &csv_bytes(u)),
        None => Ok(()),
    }
}

/// Machine-readable error line on stdout.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    pub exit_code: u8,
}

impl ErrorRecord {
    pub fn new(kind: &'static str, message: String, exit_code: u8) -> Self {
        ErrorRecord { kind, message, field: None, offset: None, exit_code }
    }

    pub fn config(err: &ConfigError) -> Self {
        ErrorRecord { kind: "config", message: err.to_string(), field: err.field(), offset: err.offset(), exit_code: 64 }
    }

    pub fn print(&self) {
        let line = serde_json::json!({ "error": self });
        println!("{line}");
    }
}
