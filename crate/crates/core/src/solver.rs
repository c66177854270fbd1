//! Continuity-method driver.
//!
//! The family `F(U[u]) = t ψ(x, u, ∇u) + (1 − t) F(U[ū])` is solved for
//! `t` marching from 0, where the subsolution `ū` is an exact solution, to 1.
//! Each stage runs a damped Newton iteration whose line search only accepts
//! iterates that stay admissible at every interior node.

use std::time::Instant;

use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{differentiate, EvalEnv, EvalError, Expr, Var};
use crate::grid::{self, Grid, GridError, GridFunction};
use crate::linsolve::{self, LinearSolveError};
use crate::spectral;
use crate::symfun::QuotientSpec;
use crate::verify::{self, DiagnosticsReport};

/// Boundary mismatch allowed between `ū` and `φ`.
pub const BOUNDARY_TOL: f64 = 1e-10;
/// Slack in the subsolution inequality `F(U[ū]) ≥ ψ(x, ū, ∇ū) − slack`.
pub const SUBSOLUTION_SLACK: f64 = 1e-8;
/// Smallest line-search step before giving up.
pub const MIN_STEP: f64 = 1.0 / (1u64 << 30) as f64;

/// Right-hand side `ψ`.
#[derive(Debug, Clone)]
pub enum Psi {
    /// `ψ(x, u, p)` with its exact partials `ψ_z` and `ψ_{p_i}`.
    Expr { expr: Expr, dz: Expr, dp: Vec<Expr> },
    /// `ψ(x)` sampled on the grid; `ψ_z ≡ 0`, `ψ_p ≡ 0`.
    Field(GridFunction),
}

impl Psi {
    pub fn from_expr(expr: Expr, n: usize) -> Psi {
        let dz = differentiate(&expr, Var::U);
        let dp = (0..n).map(|i| differentiate(&expr, Var::P(i))).collect();
        Psi::Expr { expr, dz, dp }
    }

    pub fn is_field(&self) -> bool {
        matches!(self, Psi::Field(_))
    }

    pub fn describe(&self) -> String {
        match self {
            Psi::Expr { expr, .. } => expr.to_string(),
            Psi::Field(_) => "<sampled field>".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonParams {
    pub tol_residual: f64,
    pub max_iters: usize,
}

impl Default for NewtonParams {
    fn default() -> Self {
        NewtonParams { tol_residual: 1e-9, max_iters: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomotopyParams {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for HomotopyParams {
    fn default() -> Self {
        HomotopyParams { dt_init: 0.1, dt_min: 1e-4, dt_max: 0.25 }
    }
}

/// Everything a solve needs.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub spec: QuotientSpec,
    pub psi: Psi,
    pub phi: Expr,
    pub subsolution: Expr,
    pub newton: NewtonParams,
    pub homotopy: HomotopyParams,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("grid dimension {grid} does not match n = {spec}")]
    Dimension { grid: usize, spec: usize },
    #[error("{which} may only depend on x1..x{n}, not on u or p")]
    NotSpatial { which: &'static str, n: usize },
    #[error("{which} references x{index} but n = {n}")]
    IndexOutOfRange { which: &'static str, index: usize, n: usize },
    #[error("evaluating {which} at node {node:?}: {source}")]
    Eval { which: &'static str, node: Vec<usize>, source: EvalError },
    #[error("subsolution differs from boundary data by {diff:e} at node {node:?}")]
    BoundaryMismatch { node: Vec<usize>, diff: f64 },
    #[error("subsolution is not admissible: {0}")]
    NotAdmissible(GridError),
    #[error("subsolution inequality fails at node {node:?}: F(U) = {f}, psi = {psi}")]
    NotSubsolution { node: Vec<usize>, f: f64, psi: f64 },
    #[error("psi field is defined on a different grid")]
    FieldGrid,
    #[error("invalid solver parameters: {0}")]
    Parameters(String),
}

fn check_spatial(e: &Expr, which: &'static str, n: usize) -> Result<(), ProblemError> {
    if e.depends_on(Var::U) || (0..n.max(e.max_index())).any(|i| e.depends_on(Var::P(i))) {
        return Err(ProblemError::NotSpatial { which, n });
    }
    if e.max_index() > n {
        return Err(ProblemError::IndexOutOfRange { which, index: e.max_index(), n });
    }
    Ok(())
}

fn sample_spatial(e: &Expr, grid: &Grid, which: &'static str) -> Result<GridFunction, ProblemError> {
    let mut node = 0;
    GridFunction::try_from_fn(grid.clone(), |x| {
        let v = e
            .eval(&EvalEnv::new(x, 0.0, &[]))
            .map_err(|source| ProblemError::Eval { which, node: grid.multi(node), source });
        node += 1;
        v
    })
}

/// The subsolution sampled with boundary values pinned to `φ`, plus the
/// precomputed homotopy start field `ψ₀ = F(U[ū])`.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub subsolution: GridFunction,
    pub psi0: GridFunction,
}

impl ProblemSpec {
    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Samples `ū`, checks `ū = φ` on the boundary, admissibility, and the
    /// subsolution inequality at every interior node.
    pub fn prepare(&self) -> Result<PreparedProblem, ProblemError> {
        let n = self.spec.n;
        if self.grid.dim() != n {
            return Err(ProblemError::Dimension { grid: self.grid.dim(), spec: n });
        }
        let NewtonParams { tol_residual, max_iters } = self.newton;
        let HomotopyParams { dt_init, dt_min, dt_max } = self.homotopy;
        if !(tol_residual > 0.0) || max_iters == 0 {
            return Err(ProblemError::Parameters(format!("tol = {tol_residual}, max_iters = {max_iters}")));
        }
        if !(dt_init > 0.0 && dt_init <= 1.0 && dt_min > 0.0 && dt_min <= dt_init && dt_max >= dt_init) {
            return Err(ProblemError::Parameters(format!(
                "need 0 < dt_min <= dt <= 1 and dt <= dt_max, got dt = {dt_init}, dt_min = {dt_min}, dt_max = {dt_max}"
            )));
        }
        check_spatial(&self.phi, "phi", n)?;
        check_spatial(&self.subsolution, "subsolution", n)?;
        if let Psi::Expr { expr, .. } = &self.psi {
            if expr.max_index() > n {
                return Err(ProblemError::IndexOutOfRange { which: "psi", index: expr.max_index(), n });
            }
        }
        if let Psi::Field(f) = &self.psi {
            if f.grid() != &self.grid {
                return Err(ProblemError::FieldGrid);
            }
        }

        let mut ubar = sample_spatial(&self.subsolution, &self.grid, "subsolution")?;
        let phi = sample_spatial(&self.phi, &self.grid, "phi")?;
        for node in self.grid.boundary_nodes() {
            let diff = (ubar.get(node) - phi.get(node)).abs();
            if diff > BOUNDARY_TOL {
                return Err(ProblemError::BoundaryMismatch { node: self.grid.multi(node), diff });
            }
            ubar.values_mut()[node] = phi.get(node);
        }

        let psi0 = homotopy_rhs_field(&ubar, self)?;
        for node in self.grid.interior_nodes() {
            let psi = grid::sample_psi(&self.psi, &ubar, node, false)
                .map_err(|e| match e {
                    GridError::Psi { node, source } => ProblemError::Eval { which: "psi", node, source },
                    other => ProblemError::NotAdmissible(other),
                })?
                .value;
            let f = psi0.get(node);
            if f < psi - SUBSOLUTION_SLACK {
                return Err(ProblemError::NotSubsolution { node: self.grid.multi(node), f, psi });
            }
        }
        Ok(PreparedProblem { subsolution: ubar, psi0 })
    }
}

/// `ψ₀(p) = F(U[ū])(p)` on interior nodes (zero on the boundary).
pub fn homotopy_rhs_field(ubar: &GridFunction, prob: &ProblemSpec) -> Result<GridFunction, ProblemError> {
    let g = ubar.grid();
    let mut field = GridFunction::zeros(g.clone());
    for node in g.interior_nodes() {
        let big_u = grid::transformed_hessian(ubar, node, prob.spec.tau).map_err(ProblemError::NotAdmissible)?;
        let f = spectral::f_value(&big_u, &prob.spec).map_err(|e| {
            ProblemError::NotAdmissible(match e {
                crate::AlgebraError::NotAdmissible { index, eigenvalues } => {
                    GridError::NotAdmissible { node: g.multi(node), index, eigenvalues }
                }
                other => GridError::Algebra { node: g.multi(node), source: other },
            })
        })?;
        field.values_mut()[node] = f;
    }
    Ok(field)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub t: f64,
    pub newton_iters: usize,
    pub final_residual_inf: f64,
    pub min_admissibility_margin: f64,
}

/// Extremes of `ψ` and `ψ_z` seen at accepted iterates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub min_psi: f64,
    pub min_psi_z: f64,
}

impl Default for Probe {
    fn default() -> Self {
        Probe { min_psi: f64::INFINITY, min_psi_z: f64::INFINITY }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub stages: Vec<StageRecord>,
    pub converged: bool,
    pub diagnostics: Option<DiagnosticsReport>,
    pub probe: Probe,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

impl SolveReport {
    fn new() -> Self {
        SolveReport {
            stages: Vec::new(),
            converged: false,
            diagnostics: None,
            probe: Probe::default(),
            warnings: Vec::new(),
            wall_time_s: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NewtonError {
    #[error("Newton did not reach the tolerance in {iters} iterations (residual {residual:e})")]
    MaxIterations { iters: usize, residual: f64 },
    #[error("line search failed: no admissible decrease for step >= 2^-30 (residual {residual:e})")]
    LineSearch { residual: f64 },
    #[error("linear solve: {0}")]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Error)]
pub enum SolveError {
    #[error("invalid problem: {0}")]
    InvalidProblem(#[from] ProblemError),
    #[error("homotopy stalled at t = {t} (dt = {dt:e} < dt_min): {cause}")]
    HomotopyStall {
        t: f64,
        dt: f64,
        cause: NewtonError,
        last_iterate: Box<GridFunction>,
        report: Box<SolveReport>,
    },
}

/// Result of one converged Newton stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub u: GridFunction,
    pub iters: usize,
    pub residual_inf: f64,
    pub min_margin: f64,
}

/// Damped Newton for the stage at `t`, started from the admissible,
/// boundary-correct `u0`.
pub fn newton_stage(
    u0: &GridFunction,
    t: f64,
    prob: &ProblemSpec,
    psi0: &GridFunction,
    probe: &mut Probe,
) -> Result<StageOutcome, NewtonError> {
    let mut u = u0.clone();
    let mut res = grid::assemble_residual(&u, prob, t, psi0)?;
    let mut norm = res.inf_norm();
    let mut local = Probe { min_psi: res.min_psi, min_psi_z: f64::INFINITY };
    let mut iters = 0;
    while norm > prob.newton.tol_residual {
        if iters == prob.newton.max_iters {
            return Err(NewtonError::MaxIterations { iters, residual: norm });
        }
        iters += 1;
        let mut sys = grid::assemble_jacobian(&u, prob, t)?;
        local.min_psi_z = local.min_psi_z.min(sys.min_psi_z);
        sys.rhs = res.values.iter().map(|r| -r).collect();
        let delta = linsolve::linear_solve(&sys)?;

        let mut step = 1.0;
        loop {
            if step < MIN_STEP {
                return Err(NewtonError::LineSearch { residual: norm });
            }
            let trial = u.add_interior(&delta, step);
            if let Ok(trial_res) = grid::assemble_residual(&trial, prob, t, psi0) {
                let trial_norm = trial_res.inf_norm();
                if trial_norm <= (1.0 - step / 4.0) * norm {
                    info!(
                        "t={t:.6} iter={iters} residual_inf={trial_norm:.3e} step={step} margin={:.3e}",
                        trial_res.min_margin
                    );
                    u = trial;
                    res = trial_res;
                    norm = trial_norm;
                    local.min_psi = local.min_psi.min(res.min_psi);
                    break;
                }
            }
            step *= 0.5;
        }
    }
    probe.min_psi = probe.min_psi.min(local.min_psi);
    probe.min_psi_z = probe.min_psi_z.min(local.min_psi_z);
    Ok(StageOutcome { u, iters, residual_inf: norm, min_margin: res.min_margin })
}

/// Marches `t` from 0 to 1 and returns the solution at `t = 1`.
pub fn solve_dirichlet(prob: &ProblemSpec) -> Result<(GridFunction, SolveReport), SolveError> {
    let started = Instant::now();
    let prepared = prob.prepare()?;
    let psi0 = &prepared.psi0;
    let mut report = SolveReport::new();
    if prob.n() == 2 {
        report.warnings.push("n = 2 lies outside the n >= 3 setting of the underlying theory".into());
    }

    let mut u = prepared.subsolution.clone();
    let at_target = grid::assemble_residual(&u, prob, 1.0, psi0);
    if let Ok(r) = &at_target {
        report.probe.min_psi = r.min_psi;
        if r.inf_norm() <= prob.newton.tol_residual {
            report.stages.push(StageRecord {
                t: 1.0,
                newton_iters: 0,
                final_residual_inf: r.inf_norm(),
                min_admissibility_margin: r.min_margin,
            });
            return Ok(finish(u, prob, &prepared, report, started));
        }
    }

    let hp = prob.homotopy;
    let mut t = 0.0;
    let mut dt = hp.dt_init;
    while t < 1.0 {
        let t_next = if t + dt >= 1.0 - 1e-12 { 1.0 } else { t + dt };
        match newton_stage(&u, t_next, prob, psi0, &mut report.probe) {
            Ok(stage) => {
                report.stages.push(StageRecord {
                    t: t_next,
                    newton_iters: stage.iters,
                    final_residual_inf: stage.residual_inf,
                    min_admissibility_margin: stage.min_margin,
                });
                u = stage.u;
                t = t_next;
                if stage.iters <= 3 {
                    dt = (2.0 * dt).min(hp.dt_max);
                }
            }
            Err(cause) => {
                warn!("stage t={t_next:.6} failed: {cause}; halving dt");
                dt *= 0.5;
                if dt < hp.dt_min {
                    report.wall_time_s = started.elapsed().as_secs_f64();
                    return Err(SolveError::HomotopyStall {
                        t,
                        dt,
                        cause,
                        last_iterate: Box::new(u),
                        report: Box::new(report),
                    });
                }
            }
        }
    }
    Ok(finish(u, prob, &prepared, report, started))
}

fn finish(
    u: GridFunction,
    prob: &ProblemSpec,
    prepared: &PreparedProblem,
    mut report: SolveReport,
    started: Instant,
) -> (GridFunction, SolveReport) {
    report.converged = true;
    let diagnostics = verify::run_diagnostics_with(&u, prob, &prepared.subsolution, &report.probe);
    report.warnings.extend(diagnostics.warnings.iter().cloned());
    report.diagnostics = Some(diagnostics);
    report.wall_time_s = started.elapsed().as_secs_f64();
    (u, report)
}
