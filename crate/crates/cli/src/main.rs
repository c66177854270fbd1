//! `hessquot --config problem.json [overrides]`
//!
//! Exit codes: 0 converged with clean diagnostics, 2 converged with
//! diagnostic warnings, 1 solver (or self-test) failure, 64 bad config.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use hessquot_core::solver::{solve_dirichlet, SolveError};
use hessquot_core::verify;
use log::{error, info};

use config::{Config, ConfigError, Mode, Overrides};
use output::{ErrorRecord, Report};

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_WARNINGS: u8 = 2;
const EXIT_CONFIG: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "hessquot", version, about = "Dirichlet solver for Hessian quotient equations on boxes")]
struct Cli {
    /// Problem configuration (JSON, "version": 1).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Directory receiving solution.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nodes per axis.
    #[arg(long)]
    resolution: Option<usize>,
    /// Initial homotopy step.
    #[arg(long = "t-step")]
    t_step: Option<f64>,
    /// Newton residual tolerance (max norm).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Only warnings and errors on stderr.
    #[arg(long)]
    quiet: bool,
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HESSQUOT_LOG", default))
        .format_timestamp(None)
        .init();
}

fn config_failure(err: &ConfigError) -> ExitCode {
    eprintln!("hessquot: {err}");
    ErrorRecord::config(err).print();
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            ErrorRecord::new("usage", e.kind().to_string(), EXIT_CONFIG).print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let mut cfg = match Config::load(&cli.config) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    cfg.apply(&Overrides {
        mode: cli.mode,
        out: cli.out.clone(),
        resolution: cli.resolution,
        t_step: cli.t_step,
        tol: cli.tol,
        seed: cli.seed,
        quiet: cli.quiet,
    });
    init_logging(cfg.quiet);

    match cfg.mode {
        Mode::Selftest => selftest(&cfg),
        Mode::Solve | Mode::Manufactured => solve(&cfg),
    }
}

fn selftest(cfg: &Config) -> ExitCode {
    let started = Instant::now();
    let suites = verify::full_suites(cfg.seed);
    for s in &suites {
        let status = if s.passed() { "ok" } else { "FAILED" };
        info!("{:<55} {:>9} checks  worst {:.3}  {}", s.name, s.checks, s.worst, status);
        if let Some(f) = &s.first_failure {
            error!("{}: first failure: {f}", s.name);
        }
    }
    let passed = suites.iter().all(|s| s.passed());
    let report = Report::selftest(cfg, suites, passed, started.elapsed().as_secs_f64());
    if let Err(e) = report.write(cfg) {
        eprintln!("hessquot: {e}");
        ErrorRecord::new("io", e.to_string(), EXIT_FAILURE).print();
        return ExitCode::from(EXIT_FAILURE);
    }
    ExitCode::from(if passed { EXIT_OK } else { EXIT_FAILURE })
}

fn solve(cfg: &Config) -> ExitCode {
    let (prob, exact) = match cfg.problem() {
        Ok(p) => p,
        Err(e) => return config_failure(&e),
    };

    let (u, report, failure) = match solve_dirichlet(&prob) {
        Ok((u, report)) => (u, report, None),
        Err(SolveError::InvalidProblem(e)) => {
            eprintln!("hessquot: invalid problem: {e}");
            ErrorRecord::new("problem", e.to_string(), EXIT_CONFIG).print();
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(err @ SolveError::HomotopyStall { .. }) => {
            let message = err.to_string();
            let SolveError::HomotopyStall { last_iterate, report, .. } = err else { unreachable!() };
            (*last_iterate, *report, Some(message))
        }
    };

    let max_error = exact.as_ref().map(|e| {
        u.values().iter().zip(e.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    });
    if let Some(err) = max_error {
        info!("max error against the exact solution: {err:e}");
    }

    let out = Report::solve(cfg, &prob, &report, max_error, failure.clone());
    let written = output::write_csv(&u, cfg.out.grid.as_deref()).and_then(|_| out.write(cfg));
    if let Err(e) = written {
        eprintln!("hessquot: {e}");
        ErrorRecord::new("io", e.to_string(), EXIT_FAILURE).print();
        return ExitCode::from(EXIT_FAILURE);
    }

    if let Some(message) = failure {
        eprintln!("hessquot: {message}");
        ErrorRecord::new("solver", message, EXIT_FAILURE).print();
        return ExitCode::from(EXIT_FAILURE);
    }
    // the n = 2 note is informational; only failed checks change the exit code
    if report.diagnostics.as_ref().is_some_and(|d| d.all_passed()) {
        ExitCode::from(EXIT_OK)
    } else {
        for w in &report.warnings {
            log::warn!("{w}");
        }
        ExitCode::from(EXIT_WARNINGS)
    }
}
