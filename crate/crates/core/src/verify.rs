//! Independent oracles and solution diagnostics.
//!
//! Nothing here shares a code path with the quantity it checks: `σ_k` is
//! checked against literal subset enumeration, derivatives against central
//! finite differences, and solutions against manufactured exact solutions.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::error::AlgebraError;
use crate::expr::{differentiate, BinOp, EvalEnv, Expr, Func, Var};
use crate::grid::{self, Grid, GridError, GridFunction};
use crate::matrix::SymMatrix;
use crate::solver::{self, HomotopyParams, NewtonParams, ProblemSpec, Probe, Psi, SolveError, SolveReport};
use crate::spectral::{self, eta_transform};
use crate::symfun::{self, Lambda, QuotientSpec};

/// Largest dimension the subset-enumeration oracle accepts.
pub const BRUTEFORCE_MAX_DIM: usize = 8;
/// Max-principle slack, relative to `1 + ‖u‖∞`.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-8;
/// Comparison-principle slack, relative to `1 + ‖u‖∞`.
pub const COMPARISON_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum VerifyError {
    #[error("brute-force oracle limited to n <= {BRUTEFORCE_MAX_DIM}, got n = {0}")]
    OracleScaleExceeded(usize),
    #[error("manufactured solution must depend on x only")]
    NotSpatial,
    #[error("manufactured solution: {0}")]
    Eval(String),
    #[error("manufactured solution not admissible at node {node:?}: {source}")]
    NotAdmissible { node: Vec<usize>, source: AlgebraError },
    #[error("grids are not nested: resolutions {0:?}")]
    NotNested(Vec<usize>),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("solve at resolution {res} failed: {source}")]
    Solve { res: usize, source: Box<SolveError> },
}

// ---------------------------------------------------------------------------
// Oracles

/// `σ_k` by literal enumeration of all `k`-subsets.
pub fn sigma_bruteforce(lam: &Lambda, k: usize) -> Result<f64, VerifyError> {
    let n = lam.len();
    if n > BRUTEFORCE_MAX_DIM {
        return Err(VerifyError::OracleScaleExceeded(n));
    }
    Ok(subset_sum(lam.as_slice(), k))
}

fn subset_sum(values: &[f64], k: usize) -> f64 {
    let n = values.len();
    if k > n {
        return 0.0;
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut prod = 1.0;
        for (i, v) in values.iter().enumerate() {
            if mask & (1 << i) != 0 {
                prod *= v;
            }
        }
        total += prod;
    }
    total
}

/// Conditioning scale for `σ_k`: the same sum with every entry made positive.
fn sigma_scale(values: &[f64], k: usize) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    subset_sum(&abs, k)
}

// ---------------------------------------------------------------------------
// Diagnostics

/// One diagnostic: pass/fail (or skipped) with the witnessing node and value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub ok: bool,
    pub skipped: bool,
    pub node: Vec<usize>,
    pub value: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.ok || self.skipped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    /// `value = max u − max_{∂} φ`.
    pub max_principle: Check,
    /// `value = min (u − ū)`.
    pub comparison: Check,
    /// `value = min_p min_{j≤k} σ_j(λ[U])/C(n,j)`.
    pub admissibility: Check,
    /// `value = min_p Δ_h u`.
    pub laplacian: Check,
    pub psi_positive: Check,
    pub psi_z_positive: Check,
    /// `n = 2`, admitted but outside the `n ≥ 3` theory.
    pub degenerate_dimension: bool,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn max_principle_ok(&self) -> bool {
        self.max_principle.ok
    }

    pub fn comparison_ok(&self) -> bool {
        self.comparison.ok
    }

    pub fn admissibility_min_margin(&self) -> f64 {
        self.admissibility.value
    }

    pub fn laplacian_min(&self) -> f64 {
        self.laplacian.value
    }

    /// Every non-skipped check passed.
    pub fn all_passed(&self) -> bool {
        [&self.max_principle, &self.comparison, &self.admissibility, &self.laplacian, &self.psi_positive, &self.psi_z_positive]
            .iter()
            .all(|c| c.passed())
    }
}

/// Diagnostics of a boundary-correct `u` against `prob`.
pub fn run_diagnostics(u: &GridFunction, prob: &ProblemSpec) -> DiagnosticsReport {
    let g = u.grid();
    let ubar = GridFunction::try_from_fn(g.clone(), |x| prob.subsolution.eval(&EvalEnv::new(x, 0.0, &[])))
        .unwrap_or_else(|_| u.clone());
    run_diagnostics_with(u, prob, &ubar, &Probe::default())
}

pub(crate) fn run_diagnostics_with(
    u: &GridFunction,
    prob: &ProblemSpec,
    ubar: &GridFunction,
    probe: &Probe,
) -> DiagnosticsReport {
    let g = u.grid();
    let scale = 1.0 + u.max_abs();
    let mut warnings = Vec::new();

    // discrete maximum principle
    let (argmax, umax) = u
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (p, &v)| if v > best.1 { (p, v) } else { best });
    let phi_max = g
        .boundary_nodes()
        .into_iter()
        .map(|p| prob.phi.eval(&EvalEnv::new(&g.coords(p), 0.0, &[])).unwrap_or(u.get(p)))
        .fold(f64::NEG_INFINITY, f64::max);
    let excess = umax - phi_max;
    let max_principle = Check { ok: excess <= MAX_PRINCIPLE_TOL * scale, skipped: false, node: g.multi(argmax), value: excess };

    // admissibility and Laplacian on interior nodes
    let mut admissibility = Check { ok: true, skipped: false, node: Vec::new(), value: f64::INFINITY };
    let mut laplacian = Check { ok: true, skipped: false, node: Vec::new(), value: f64::INFINITY };
    let mut psi_positive = Check { ok: true, skipped: false, node: Vec::new(), value: f64::INFINITY };
    let mut psi_z_positive = Check { ok: true, skipped: prob.psi.is_field(), node: Vec::new(), value: f64::INFINITY };
    for node in g.interior_nodes() {
        let hess = grid::fd_hessian(u, node).expect("interior node");
        let lap = hess.trace();
        if lap < laplacian.value {
            laplacian.value = lap;
            laplacian.node = g.multi(node);
        }
        let big_u = eta_transform(&hess, prob.spec.tau);
        let margin = spectral::sym_eig(&big_u)
            .map(|e| symfun::admissibility_margin(&e.values, prob.spec.k))
            .unwrap_or(f64::NEG_INFINITY);
        if margin < admissibility.value {
            admissibility.value = margin;
            admissibility.node = g.multi(node);
        }
        match grid::sample_psi(&prob.psi, u, node, true) {
            Ok(s) => {
                if s.value < psi_positive.value {
                    psi_positive.value = s.value;
                    psi_positive.node = g.multi(node);
                }
                if !prob.psi.is_field() && s.dz < psi_z_positive.value {
                    psi_z_positive.value = s.dz;
                    psi_z_positive.node = g.multi(node);
                }
            }
            Err(e) => {
                warnings.push(format!("psi could not be evaluated: {e}"));
                psi_positive.ok = false;
                psi_positive.node = g.multi(node);
            }
        }
    }
    psi_positive.value = psi_positive.value.min(probe.min_psi);
    psi_positive.ok &= psi_positive.value > 0.0;
    if prob.psi.is_field() {
        psi_z_positive.value = 0.0;
        psi_z_positive.ok = false;
    } else {
        psi_z_positive.value = psi_z_positive.value.min(probe.min_psi_z);
        psi_z_positive.ok = psi_z_positive.value > 0.0;
    }
    admissibility.ok = admissibility.value > 0.0;
    laplacian.ok = laplacian.value > 0.0;

    // comparison with the subsolution; only meaningful when psi_z > 0
    let (argmin, gap) = u
        .values()
        .iter()
        .zip(ubar.values())
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (p, d)| if d < best.1 { (p, d) } else { best });
    let comparison = Check {
        ok: gap >= -COMPARISON_TOL * scale,
        skipped: !psi_z_positive.ok,
        node: g.multi(argmin),
        value: gap,
    };

    if !max_principle.ok {
        warnings.push(format!("maximum principle violated by {excess:e} at node {:?}", max_principle.node));
    }
    if !comparison.skipped && !comparison.ok {
        warnings.push(format!("u < subsolution by {:e} at node {:?}", -gap, comparison.node));
    }
    if comparison.skipped && !prob.psi.is_field() {
        warnings.push("psi_z > 0 does not hold; comparison check skipped".into());
    }
    if !admissibility.ok {
        warnings.push(format!("not admissible at node {:?}", admissibility.node));
    }
    if !laplacian.ok {
        warnings.push(format!("discrete Laplacian not positive at node {:?}", laplacian.node));
    }
    if !psi_positive.ok {
        warnings.push(format!("psi not positive (min {})", psi_positive.value));
    }
    if !prob.psi.is_field() && !psi_z_positive.ok {
        warnings.push(format!("psi_z not positive (min {})", psi_z_positive.value));
    }

    DiagnosticsReport {
        max_principle,
        comparison,
        admissibility,
        laplacian,
        psi_positive,
        psi_z_positive,
        degenerate_dimension: g.dim() == 2,
        warnings,
    }
}

// ---------------------------------------------------------------------------
// Manufactured solutions

/// Builds the problem whose exact solution is `ustar`: `ψ = F(U[u*])` from
/// the exact symbolic Hessian, sampled as a field; `φ = ū = u*`.
pub fn manufactured_problem(
    ustar: &Expr,
    grid: &Grid,
    spec: QuotientSpec,
) -> Result<(ProblemSpec, GridFunction), VerifyError> {
    let n = grid.dim();
    if ustar.depends_on(Var::U) || (0..n.max(ustar.max_index())).any(|i| ustar.depends_on(Var::P(i))) || ustar.max_index() > n {
        return Err(VerifyError::NotSpatial);
    }
    let second: Vec<Vec<Expr>> = (0..n)
        .map(|i| {
            let di = differentiate(ustar, Var::X(i));
            (0..n).map(|j| differentiate(&di, Var::X(j))).collect()
        })
        .collect();

    let mut field = GridFunction::zeros(grid.clone());
    for node in grid.interior_nodes() {
        let x = grid.coords(node);
        let env = EvalEnv::new(&x, 0.0, &[]);
        let mut hess = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = second[i][j].eval(&env).map_err(|e| VerifyError::Eval(e.to_string()))?;
                hess.set(i, j, v);
            }
        }
        let f = spectral::f_value(&eta_transform(&hess, spec.tau), &spec)
            .map_err(|source| VerifyError::NotAdmissible { node: grid.multi(node), source })?;
        field.values_mut()[node] = f;
    }
    let exact = GridFunction::try_from_fn(grid.clone(), |x| ustar.eval(&EvalEnv::new(x, 0.0, &[])))
        .map_err(|e| VerifyError::Eval(e.to_string()))?;
    let prob = ProblemSpec {
        grid: grid.clone(),
        spec,
        psi: Psi::Field(field),
        phi: ustar.clone(),
        subsolution: ustar.clone(),
        newton: NewtonParams::default(),
        homotopy: HomotopyParams::default(),
    };
    Ok((prob, exact))
}

/// Max-norm errors of a manufactured-solution family and the observed order.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub resolutions: Vec<usize>,
    pub errors: Vec<f64>,
    /// `None` when every error is at round-off level.
    pub order: Option<f64>,
    pub exact: bool,
    /// Measured order below 1: most likely a discretisation bug.
    pub suspicious: bool,
    #[serde(skip)]
    pub reports: Vec<SolveReport>,
}

/// Solves the family produced by `build` at each resolution and measures
/// `log(e_h / e_{h'}) / log(h / h')` on the nodes shared by all grids
/// (those of the coarsest one).
pub fn convergence_order(
    resolutions: &[usize],
    mut build: impl FnMut(usize) -> Result<(ProblemSpec, GridFunction), VerifyError>,
) -> Result<ConvergenceStudy, VerifyError> {
    let coarse = *resolutions.first().ok_or_else(|| VerifyError::NotNested(Vec::new()))?;
    if resolutions.windows(2).any(|w| w[1] <= w[0] || (w[1] - 1) % (coarse - 1) != 0) {
        return Err(VerifyError::NotNested(resolutions.to_vec()));
    }
    let mut errors = Vec::new();
    let mut reports = Vec::new();
    let mut scale: f64 = 0.0;
    for &res in resolutions {
        let (prob, exact) = build(res)?;
        let (u, report) =
            solver::solve_dirichlet(&prob).map_err(|e| VerifyError::Solve { res, source: Box::new(e) })?;
        let g = u.grid();
        let ratio = (res - 1) / (coarse - 1);
        let coarse_grid = Grid::new(g.lo().to_vec(), g.hi().to_vec(), coarse)?;
        let err = (0..coarse_grid.node_count())
            .map(|p| {
                let fine: Vec<usize> = coarse_grid.multi(p).iter().map(|i| i * ratio).collect();
                let q = g.linear(&fine);
                (u.get(q) - exact.get(q)).abs()
            })
            .fold(0.0, f64::max);
        scale = scale.max(exact.max_abs());
        errors.push(err);
        reports.push(report);
    }
    let exact = errors.iter().all(|e| *e <= 1e-10 * (1.0 + scale));
    let order = if exact {
        None
    } else {
        let orders: Vec<f64> = errors
            .windows(2)
            .zip(resolutions.windows(2))
            .map(|(e, r)| (e[0] / e[1]).ln() / (((r[1] - 1) as f64) / ((r[0] - 1) as f64)).ln())
            .collect();
        Some(orders.iter().sum::<f64>() / orders.len() as f64)
    };
    let suspicious = order.is_some_and(|o| o < 1.0);
    Ok(ConvergenceStudy { resolutions: resolutions.to_vec(), errors, order, exact, suspicious, reports })
}

// ---------------------------------------------------------------------------
// Property suites

/// Outcome of one randomized property suite. `worst` is the largest observed
/// `error / allowed` ratio (≤ 1 means every check passed).
#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub checks: usize,
    pub failures: usize,
    pub worst: f64,
    pub first_failure: Option<String>,
    pub seconds: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }
}

struct Tally {
    name: String,
    checks: usize,
    failures: usize,
    worst: f64,
    first_failure: Option<String>,
    started: Instant,
}

impl Tally {
    fn new(name: &str) -> Self {
        Tally { name: name.into(), checks: 0, failures: 0, worst: 0.0, first_failure: None, started: Instant::now() }
    }

    /// Records `error ≤ allowed`.
    fn within(&mut self, error: f64, allowed: f64, what: impl FnOnce() -> String) {
        self.checks += 1;
        let ratio = if allowed > 0.0 { error / allowed } else if error <= 0.0 { 0.0 } else { f64::INFINITY };
        let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
        self.worst = self.worst.max(ratio);
        if !(error <= allowed) {
            self.fail(what);
        }
    }

    fn holds(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.fail(what);
        }
    }

    fn fail(&mut self, what: impl FnOnce() -> String) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(what());
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            checks: self.checks,
            failures: self.failures,
            worst: self.worst,
            first_failure: self.first_failure,
            seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gamma_sample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Lambda {
    symfun::sample_gamma_k_with(rng, n, k).expect("Gamma_k sampler")
}

/// Spec with `0 ≤ l < k` (looser than the operator's `l + 2 ≤ k`, as the
/// symmetric-function identities hold for every `l < k`).
fn loose_spec(n: usize, k: usize, l: usize) -> QuotientSpec {
    QuotientSpec { n, k, l, tau: 1.0 }
}

/// `sigma_all` against subset enumeration for every `k`, with mixed-sign
/// entries drawn uniformly from `[-2, 2]`.
pub fn sigma_oracle_suite(seed: u64, samples_per_n: usize) -> SuiteResult {
    let mut tally = Tally::new("sigma_all vs subset enumeration");
    let mut rng = rng_for(seed, 1);
    for n in 2..=BRUTEFORCE_MAX_DIM {
        for _ in 0..samples_per_n {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lam = Lambda::new(values.clone()).expect("finite sample");
            let fast = symfun::sigma_all(&lam);
            for k in 0..=n {
                let slow = sigma_bruteforce(&lam, k).expect("n <= 8");
                let err = (fast.get(k as isize) - slow).abs();
                tally.within(err, 1e-12 * sigma_scale(&values, k), || format!("n={n} k={k} lambda={values:?}"));
            }
        }
    }
    tally.finish()
}

/// The seven classical properties of `σ_k` on `Γ_k` for every `(n, k)` with
/// `n ≤ max_n`.
pub fn sigma_properties_suite(seed: u64, samples_per_pair: usize, max_n: usize) -> SuiteResult {
    let mut tally = Tally::new("sigma_k properties on Gamma_k");
    let mut rng = rng_for(seed, 2);
    for n in 2..=max_n {
        for k in 1..=n {
            for _ in 0..samples_per_pair {
                let lam = gamma_sample(&mut rng, n, k);
                let v = lam.as_slice().to_vec();
                let sig = symfun::sigma_all(&lam);

                // (1) nested cones
                for j in 1..k {
                    tally.holds(symfun::in_gamma_k(&lam, j), || format!("(1) n={n} k={k} j={j} {v:?}"));
                }
                let partials: Vec<f64> = (0..n).map(|i| symfun::sigma_partial(&lam, k, i).unwrap()).collect();
                // (2) positivity of the partials
                for (i, d) in partials.iter().enumerate() {
                    tally.holds(*d > 0.0, || format!("(2) n={n} k={k} i={i} {v:?}"));
                }
                // (3) deletion identity
                let scale_k = sigma_scale(&v, k);
                for i in 0..n {
                    let without = if k < n { symfun::sigma_partial(&lam, k + 1, i).unwrap() } else { 0.0 };
                    let err = (sig.get(k as isize) - without - v[i] * partials[i]).abs();
                    tally.within(err, 1e-12 * scale_k, || format!("(3) n={n} k={k} i={i} {v:?}"));
                }
                // (4) gradient-sum lower bound and (5) concavity, for every l < k
                let other = gamma_sample(&mut rng, n, k);
                let theta: f64 = rng.random_range(0.0..1.0);
                let mixed: Vec<f64> =
                    v.iter().zip(other.as_slice()).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
                for l in 0..k {
                    let spec = loose_spec(n, k, l);
                    let (_, grad) = symfun::quotient_value_gradient_raw(&v, &spec).unwrap();
                    let sum: f64 = grad.iter().sum();
                    let bound = spec.unit_value();
                    tally.within(bound - sum, 1e-10 * bound.max(1.0), || format!("(4) n={n} k={k} l={l} {v:?}"));

                    let fa = symfun::quotient_value_raw(&v, &spec).unwrap();
                    let fb = symfun::quotient_value_raw(other.as_slice(), &spec).unwrap();
                    let fm = symfun::quotient_value_raw(&mixed, &spec).unwrap();
                    let chord = theta * fa + (1.0 - theta) * fb;
                    tally.within(chord - fm, 1e-10 * chord.abs().max(1.0), || {
                        format!("(5) n={n} k={k} l={l} theta={theta} {v:?} {:?}", other.as_slice())
                    });
                }
                // (6) monotone partials along a descending ordering
                let mut sorted = v.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let sorted_lam = Lambda::new(sorted.clone()).unwrap();
                let ordered: Vec<f64> = (0..n).map(|i| symfun::sigma_partial(&sorted_lam, k, i).unwrap()).collect();
                let scale_km1 = sigma_scale(&sorted, k - 1);
                for i in 1..n {
                    tally.within(ordered[i - 1] - ordered[i], 1e-10 * scale_km1.max(1e-300), || {
                        format!("(6) n={n} k={k} i={i} {sorted:?}")
                    });
                }
                // (7) sum of partials
                let total: f64 = partials.iter().sum();
                let expect = (n - k + 1) as f64 * sig.get(k as isize - 1);
                let scale = (n - k + 1) as f64 * sigma_scale(&v, k - 1);
                tally.within((total - expect).abs(), 1e-12 * scale, || format!("(7) n={n} k={k} {v:?}"));
            }
        }
    }
    tally.finish()
}

/// Generalised Newton–MacLaurin inequality over every valid `(m, l, r, s)`.
pub fn newton_maclaurin_suite(seed: u64, samples_per_pair: usize, max_n: usize) -> SuiteResult {
    let mut tally = Tally::new("generalised Newton-MacLaurin");
    let mut rng = rng_for(seed, 3);
    for n in 2..=max_n {
        for m in 1..=n {
            for _ in 0..samples_per_pair {
                let lam = gamma_sample(&mut rng, n, m);
                for l in 0..m {
                    for r in 1..=m {
                        for s in 0..r.min(l + 1) {
                            let (lhs, rhs) = symfun::newton_maclaurin_sides(&lam, m, l, r, s).unwrap();
                            tally.within(lhs - rhs, 1e-12 * rhs.abs().max(1.0), || {
                                format!("n={n} (m,l,r,s)=({m},{l},{r},{s}) {:?}", lam.as_slice())
                            });
                        }
                    }
                }
            }
        }
    }
    tally.finish()
}

fn random_spec(rng: &mut ChaCha8Rng, n_min: usize, n_max: usize, k_min: usize) -> QuotientSpec {
    let n = rng.random_range(n_min..=n_max);
    let k = rng.random_range(k_min.max(2)..=n);
    let l = rng.random_range(0..=k - 2);
    let tau = rng.random_range(1.0..3.0);
    QuotientSpec::new(n, k, l, tau).expect("valid random spec")
}

/// A `Γ_k` point whose coordinate perturbations by `rel·(1 + |λ_i|)` stay in
/// `Γ_k`; finite-difference oracles need that much room.
fn interior_sample(rng: &mut ChaCha8Rng, n: usize, k: usize, rel: f64) -> Lambda {
    loop {
        let lam = gamma_sample(rng, n, k);
        let v = lam.as_slice();
        let roomy = (0..n).all(|i| {
            [-1.0, 1.0].iter().all(|sgn| {
                let mut w = v.to_vec();
                w[i] += sgn * rel * (1.0 + v[i].abs());
                symfun::first_cone_violation(&w, k).is_none()
            })
        });
        if roomy {
            return lam;
        }
    }
}

/// Haar-ish random orthogonal matrix (Gram–Schmidt of a Gaussian matrix),
/// row-major.
pub fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect()).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let rj = rows[j].clone();
                rows[i].iter_mut().zip(&rj).for_each(|(a, b)| *a -= d * b);
            }
            let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|a| *a /= norm);
        }
        if ok {
            return rows.concat();
        }
    }
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            m.set(i, j, StandardNormal.sample(rng));
        }
    }
    let norm = m.frobenius_norm();
    m.scaled(1.0 / norm)
}

/// `U = R diag(λ) Rᵀ` with `λ ∈ Γ_k` and a random rotation `R`.
fn random_admissible_matrix(rng: &mut ChaCha8Rng, spec: &QuotientSpec, rel: f64) -> SymMatrix {
    let lam = interior_sample(rng, spec.n, spec.k, rel);
    let r = random_rotation(rng, spec.n);
    SymMatrix::from_diagonal(lam.as_slice()).conjugate(&r)
}

/// Closed-form `f_i` against central differences of `f`.
pub fn quotient_gradient_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("quotient_gradient vs central differences");
    let mut rng = rng_for(seed, 4);
    for _ in 0..samples {
        let spec = random_spec(&mut rng, 2, 6, 2);
        let lam = interior_sample(&mut rng, spec.n, spec.k, 0.1);
        let v = lam.as_slice();
        let grad = symfun::quotient_gradient(&lam, &spec).unwrap();
        let gmax = grad.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        for i in 0..spec.n {
            let h = 1e-6 * (1.0 + v[i].abs());
            let mut p = v.to_vec();
            let mut q = v.to_vec();
            p[i] += h;
            q[i] -= h;
            let fd = (symfun::quotient_value_raw(&p, &spec).unwrap() - symfun::quotient_value_raw(&q, &spec).unwrap())
                / (2.0 * h);
            tally.within((fd - grad[i]).abs(), 1e-6 * gmax, || format!("{spec:?} i={i} {v:?}"));
        }
    }
    tally.finish()
}

/// Closed-form `f_ij` against central differences of the gradient.
pub fn quotient_hessian_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("quotient_hessian vs differences of the gradient");
    let mut rng = rng_for(seed, 5);
    for _ in 0..samples {
        let spec = random_spec(&mut rng, 2, 6, 2);
        let lam = interior_sample(&mut rng, spec.n, spec.k, 0.1);
        let v = lam.as_slice();
        let hess = symfun::quotient_hessian(&lam, &spec).unwrap();
        let hmax = hess.max_abs().max(1e-300);
        // symmetric and annihilates λ (Euler identity for 1-homogeneous f)
        let hv = hess.mul_vec(v);
        let vmax = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        tally.within(hv.iter().fold(0.0_f64, |m, x| m.max(x.abs())), 1e-10 * hmax * vmax.max(1.0), || {
            format!("Euler identity {spec:?} {v:?}")
        });
        for j in 0..spec.n {
            let h = 1e-6 * (1.0 + v[j].abs());
            let mut p = v.to_vec();
            let mut q = v.to_vec();
            p[j] += h;
            q[j] -= h;
            let gp = symfun::quotient_value_gradient_raw(&p, &spec).unwrap().1;
            let gq = symfun::quotient_value_gradient_raw(&q, &spec).unwrap().1;
            for i in 0..spec.n {
                let fd = (gp[i] - gq[i]) / (2.0 * h);
                tally.within((fd - hess.get(i, j)).abs(), 1e-5 * hmax, || format!("{spec:?} ({i},{j}) {v:?}"));
            }
        }
    }
    tally.finish()
}

/// `⟨F'(U), E⟩` against `(F(U + hE) − F(U − hE))/2h` for ten random
/// directions per sample.
pub fn f_gradient_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("F_gradient vs directional differences");
    let mut rng = rng_for(seed, 6);
    for _ in 0..samples {
        let spec = random_spec(&mut rng, 2, 6, 2);
        let u = random_admissible_matrix(&mut rng, &spec, 0.1);
        let grad = spectral::f_gradient(&u, &spec).unwrap();
        let h = 1e-6 * (1.0 + u.max_abs());
        for _ in 0..10 {
            let e = random_symmetric(&mut rng, spec.n);
            let fp = spectral::f_value(&u.add_scaled(&e, h), &spec).unwrap();
            let fm = spectral::f_value(&u.add_scaled(&e, -h), &spec).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let exact = grad.dot(&e);
            tally.within((fd - exact).abs(), 1e-6 * grad.frobenius_norm(), || format!("{spec:?} U={u:?}"));
        }
    }
    tally.finish()
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    let leaf = |rng: &mut ChaCha8Rng| match rng.random_range(0..6) {
        0 => Expr::Num(rng.random_range(0.1..3.0)),
        1 => Expr::Var(Var::X(0)),
        2 => Expr::Var(Var::X(1)),
        3 => Expr::Var(Var::U),
        4 => Expr::Var(Var::P(0)),
        _ => Expr::Var(Var::P(1)),
    };
    if depth == 0 || rng.random_bool(0.25) {
        return leaf(rng);
    }
    let sub = |rng: &mut ChaCha8Rng| Box::new(random_tree(rng, depth - 1));
    match rng.random_range(0..11) {
        0 => Expr::Bin(BinOp::Add, sub(rng), sub(rng)),
        1 => Expr::Bin(BinOp::Sub, sub(rng), sub(rng)),
        2 | 3 => Expr::Bin(BinOp::Mul, sub(rng), sub(rng)),
        4 => Expr::Bin(BinOp::Div, sub(rng), sub(rng)),
        5 => Expr::Bin(BinOp::Pow, sub(rng), Box::new(Expr::Num(rng.random_range(1..4) as f64))),
        6 => Expr::Neg(sub(rng)),
        7 => Expr::Call(Func::Sin, sub(rng)),
        8 => Expr::Call(Func::Cos, sub(rng)),
        9 => Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, sub(rng)))),
        _ => {
            let a = sub(rng);
            let sq = Expr::Bin(BinOp::Add, Box::new(Expr::Num(1.0)), Box::new(Expr::Bin(BinOp::Mul, a.clone(), a)));
            if rng.random_bool(0.5) {
                Expr::Call(Func::Sqrt, Box::new(sq))
            } else {
                Expr::Call(Func::Log, Box::new(sq))
            }
        }
    }
}

/// Symbolic derivatives against central differences on random trees.
/// Points where the expression faults or is too steep for a difference
/// quotient to be meaningful are redrawn.
pub fn expr_derivative_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("expr differentiate vs central differences");
    let mut rng = rng_for(seed, 7);
    let vars = [Var::X(0), Var::X(1), Var::U, Var::P(0), Var::P(1)];
    let mut accepted = 0;
    while accepted < samples {
        let e = random_tree(&mut rng, 4);
        let var = vars[rng.random_range(0..vars.len())];
        let d = differentiate(&e, var);
        let mut x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut u = rng.random_range(-1.0..1.0);
        let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (Ok(base), Ok(exact)) = (e.eval(&EvalEnv::new(&x, u, &p)), d.eval(&EvalEnv::new(&x, u, &p))) else {
            continue;
        };
        if exact.abs() > 1e3 || base.abs() > 1e3 {
            continue;
        }
        let h = 1e-6 * (1.0 + base.abs());
        let slot: &mut f64 = match var {
            Var::X(i) => &mut x[i],
            Var::U => &mut u,
            Var::P(i) => &mut p[i],
        };
        let origin = *slot;
        *slot = origin + h;
        let plus = e.eval(&EvalEnv::new(&x, u, &p));
        let slot: &mut f64 = match var {
            Var::X(i) => &mut x[i],
            Var::U => &mut u,
            Var::P(i) => &mut p[i],
        };
        *slot = origin - h;
        let minus = e.eval(&EvalEnv::new(&x, u, &p));
        let (Ok(fp), Ok(fm)) = (plus, minus) else { continue };
        accepted += 1;
        let fd = (fp - fm) / (2.0 * h);
        tally.within((fd - exact).abs(), 1e-6 * exact.abs().max(1.0), || format!("d/d{var} of {e}"));
    }
    tally.finish()
}

/// Matrix-free check of the assembled Jacobian:
/// `(R(u + εδ) − R(u − εδ))/2ε` against `J δ` for random sparse `δ`.
pub fn jacobian_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("Jacobian vs directional differences of the residual");
    let mut rng = rng_for(seed, 8);
    for _ in 0..samples {
        let n = rng.random_range(2..=3);
        let res = if n == 2 { rng.random_range(6..=10) } else { rng.random_range(5..=7) };
        let spec = random_spec(&mut rng, n, n, 2);
        let grid = Grid::unit(n, res).unwrap();
        let h = grid.spacing()[0];
        let curvature = rng.random_range(0.5..2.0);
        let shift: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut u = GridFunction::try_from_fn::<()>(grid.clone(), |x| {
            Ok(0.5 * curvature * x.iter().zip(&shift).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .unwrap();
        // rough perturbation, small against the base curvature after two differences
        for node in grid.interior_nodes() {
            u.values_mut()[node] += 0.02 * curvature * h * h * rng.random_range(-1.0..1.0);
        }
        let psi_src = if n == 2 {
            "1 + 0.3*sin(x1)*u^2 + 0.2*p1*p2 + exp(0.1*u) + 0.1*p2^2"
        } else {
            "1 + 0.3*sin(x1 + x3)*u^2 + 0.2*p1*p3 + exp(0.1*u) - 0.1*p2"
        };
        let psi = Psi::from_expr(crate::expr::parse(psi_src, n).unwrap(), n);
        let prob = ProblemSpec {
            grid: grid.clone(),
            spec,
            psi,
            phi: Expr::Num(0.0),
            subsolution: Expr::Num(0.0),
            newton: NewtonParams::default(),
            homotopy: HomotopyParams::default(),
        };
        let psi0 = GridFunction::try_from_fn::<()>(grid.clone(), |_| Ok(1.0)).unwrap();
        let t = rng.random_range(0.0..=1.0);
        let Ok(sys) = grid::assemble_jacobian(&u, &prob, t) else {
            tally.holds(false, || "random state not admissible".into());
            continue;
        };
        let count = grid.interior_count();
        let mut delta = vec![0.0; count];
        for _ in 0..rng.random_range(1..=4) {
            delta[rng.random_range(0..count)] = rng.random_range(-1.0..1.0);
        }
        let eps = 1e-6 * (1.0 + u.max_abs());
        let rp = grid::assemble_residual(&u.add_interior(&delta, eps), &prob, t, &psi0).unwrap();
        let rm = grid::assemble_residual(&u.add_interior(&delta, -eps), &prob, t, &psi0).unwrap();
        let jd = sys.matrix.mul_vec(&delta);
        let jmax = jd.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = rp
            .values
            .iter()
            .zip(&rm.values)
            .zip(&jd)
            .map(|((a, b), j)| ((a - b) / (2.0 * eps) - j).abs())
            .fold(0.0, f64::max);
        tally.within(err, 1e-5 * jmax, || format!("{spec:?} res={res} t={t}"));
        // stencil locality: at most 3^n entries per row
        let width = 3usize.pow(n as u32);
        let widest = (0..sys.matrix.rows).map(|r| sys.matrix.row(r).count()).max().unwrap_or(0);
        tally.holds(widest <= width, || format!("row with {widest} entries"));
    }
    tally.finish()
}

/// Ellipticity of `F'` and `Q`, the trace bound, and midpoint concavity of
/// `F` on random admissible matrices.
pub fn ellipticity_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("ellipticity, trace bound and concavity of F");
    let mut rng = rng_for(seed, 9);
    for _ in 0..samples {
        let spec = random_spec(&mut rng, 2, 6, 2);
        let u = random_admissible_matrix(&mut rng, &spec, 0.0);
        let w = random_admissible_matrix(&mut rng, &spec, 0.0);
        let grad = spectral::f_gradient(&u, &spec).unwrap();
        let min_g = spectral::sym_eig(&grad).unwrap().values[0];
        tally.holds(min_g > 0.0, || format!("F' not positive definite: {min_g} {spec:?}"));

        let bound = spec.unit_value();
        tally.within(bound - grad.trace(), 1e-10 * bound.max(1.0), || format!("trace bound {spec:?}"));

        // A with T(A) = U
        let shift = spec.tau * u.trace() / (spec.tau * spec.n as f64 - 1.0);
        let a = SymMatrix::identity(spec.n).scaled(shift).add_scaled(&u, -1.0);
        let q = spectral::q_gradient(&a, &spec).unwrap();
        let min_q = spectral::sym_eig(&q).unwrap().values[0];
        tally.holds(min_q > 0.0, || format!("Q not positive definite: {min_q} {spec:?}"));

        let fu = spectral::f_value(&u, &spec).unwrap();
        let fw = spectral::f_value(&w, &spec).unwrap();
        let mid = spectral::f_value(&u.scaled(0.5).add_scaled(&w, 0.5), &spec).unwrap();
        let chord = 0.5 * (fu + fw);
        tally.within(chord - mid, 1e-10 * chord.abs().max(1.0), || format!("midpoint concavity {spec:?}"));
    }
    tally.finish()
}

/// `−F^{ij,ji}` at diagonal `U` from the divided difference, against half the
/// second difference of `s ↦ F(U + s(E_ij + E_ji))` (whose second derivative
/// is `2F^{ij,ji}`). Eigenvalues are kept apart by at least
/// `0.1·(1 + max|λ|)` and `k ≥ 3`.
pub fn offdiag_suite(seed: u64, samples: usize) -> SuiteResult {
    let mut tally = Tally::new("divided-difference second derivative");
    let mut rng = rng_for(seed, 10);
    for _ in 0..samples {
        let spec = random_spec(&mut rng, 3, 6, 3);
        let lam = loop {
            let lam = interior_sample(&mut rng, spec.n, spec.k, 0.1);
            let v = lam.as_slice();
            let top = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let separated = (0..spec.n).all(|i| (0..i).all(|j| (v[i] - v[j]).abs() >= 0.1 * (1.0 + top)));
            if separated {
                break lam;
            }
        };
        let v = lam.as_slice();
        let top = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let u = SymMatrix::from_diagonal(v);
        let f0 = spectral::f_value(&u, &spec).unwrap();
        let s = 1e-3 * (1.0 + top);
        for i in 1..spec.n {
            let formula = spectral::neg_offdiag_second(&u, &spec, 0, i).unwrap();
            let mut e = SymMatrix::zeros(spec.n);
            e.set(0, i, 1.0);
            let fp = spectral::f_value(&u.add_scaled(&e, s), &spec).unwrap();
            let fm = spectral::f_value(&u.add_scaled(&e, -s), &spec).unwrap();
            let second = (fp - 2.0 * f0 + fm) / (s * s);
            let fd = -0.5 * second;
            tally.within((fd - formula).abs(), 1e-4 * formula.abs().max(1.0), || {
                format!("{spec:?} i={i} formula={formula} fd={fd} {v:?}")
            });
        }
    }
    tally.finish()
}

/// Sample counts used by the full self-test.
pub mod budget {
    pub const SIGMA_ORACLE_PER_N: usize = 1_000;
    pub const PROPERTIES_PER_PAIR: usize = 10_000;
    pub const NEWTON_MACLAURIN_PER_PAIR: usize = 10_000;
    pub const MAX_N: usize = 6;
    pub const DERIVATIVE_SAMPLES: usize = 200;
    pub const JACOBIAN_SAMPLES: usize = 100;
    pub const ELLIPTICITY_PAIRS: usize = 1_000;
    pub const OFFDIAG_SAMPLES: usize = 100;
}

/// Every property suite at the [`budget`] sample counts.
pub fn full_suites(seed: u64) -> Vec<SuiteResult> {
    use budget::*;
    vec![
        sigma_oracle_suite(seed, SIGMA_ORACLE_PER_N),
        sigma_properties_suite(seed, PROPERTIES_PER_PAIR, MAX_N),
        newton_maclaurin_suite(seed, NEWTON_MACLAURIN_PER_PAIR, MAX_N),
        quotient_gradient_suite(seed, DERIVATIVE_SAMPLES),
        quotient_hessian_suite(seed, DERIVATIVE_SAMPLES),
        f_gradient_suite(seed, DERIVATIVE_SAMPLES),
        jacobian_suite(seed, JACOBIAN_SAMPLES),
        expr_derivative_suite(seed, DERIVATIVE_SAMPLES),
        ellipticity_suite(seed, ELLIPTICITY_PAIRS),
        offdiag_suite(seed, OFFDIAG_SAMPLES),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn bruteforce_examples() {
        let l = Lambda::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(sigma_bruteforce(&l, 2).unwrap(), 11.0);
        assert_eq!(sigma_bruteforce(&l, 0).unwrap(), 1.0);
        assert_eq!(sigma_bruteforce(&l, 4).unwrap(), 0.0);
        assert_eq!(sigma_bruteforce(&Lambda::new(vec![1.0; 4]).unwrap(), 3).unwrap(), 4.0);
        let big = Lambda::new(vec![1.0; 9]).unwrap();
        assert!(matches!(sigma_bruteforce(&big, 2), Err(VerifyError::OracleScaleExceeded(9))));
    }

    #[test]
    fn manufactured_quadratic_gives_constant_psi() {
        for (n, k, l, tau) in [(3, 3, 1, 1.0), (3, 2, 0, 2.0), (2, 2, 0, 1.5)] {
            let spec = QuotientSpec::new(n, k, l, tau).unwrap();
            let grid = Grid::unit(n, 6).unwrap();
            let src = if n == 3 { "0.5*(x1^2 + x2^2 + x3^2)" } else { "0.5*(x1^2 + x2^2)" };
            let (prob, exact) = manufactured_problem(&parse(src, n).unwrap(), &grid, spec).unwrap();
            let want = spec.unit_value() * (tau * n as f64 - 1.0);
            let Psi::Field(field) = &prob.psi else { panic!("expected a field") };
            for node in grid.interior_nodes() {
                assert!((field.get(node) - want).abs() < 1e-12);
                let x = grid.coords(node);
                assert!((exact.get(node) - 0.5 * x.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn manufactured_exp_is_admissible() {
        let spec = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
        let grid = Grid::unit(3, 9).unwrap();
        let ustar = parse("exp((x1^2 + x2^2 + x3^2)/4)", 3).unwrap();
        assert!(manufactured_problem(&ustar, &grid, spec).is_ok());
    }

    #[test]
    fn manufactured_rejects_inadmissible() {
        let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
        let grid = Grid::unit(2, 6).unwrap();
        let concave = parse("-(x1^2 + x2^2)", 2).unwrap();
        assert!(matches!(manufactured_problem(&concave, &grid, spec), Err(VerifyError::NotAdmissible { .. })));
        let bad = parse("u + x1", 2).unwrap();
        assert!(matches!(manufactured_problem(&bad, &grid, spec), Err(VerifyError::NotSpatial)));
    }

    #[test]
    fn diagnostics_flag_an_injected_bump() {
        let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
        let grid = Grid::unit(2, 9).unwrap();
        let ustar = parse("0.5*(x1^2 + x2^2)", 2).unwrap();
        let (prob, exact) = manufactured_problem(&ustar, &grid, spec).unwrap();
        let clean = run_diagnostics(&exact, &prob);
        assert!(clean.max_principle_ok());
        assert!(clean.comparison.ok);
        assert!((clean.laplacian_min() - 2.0).abs() < 1e-10);

        let mut bumped = exact.clone();
        let node = grid.linear(&[4, 4]);
        bumped.values_mut()[node] = 5.0;
        let diag = run_diagnostics(&bumped, &prob);
        assert!(!diag.max_principle_ok());
        assert_eq!(diag.max_principle.node, vec![4, 4]);
        assert!(!diag.all_passed());
    }

    #[test]
    fn small_suites_pass() {
        for result in [
            sigma_oracle_suite(1, 20),
            sigma_properties_suite(1, 30, 4),
            newton_maclaurin_suite(1, 30, 4),
            quotient_gradient_suite(1, 20),
            quotient_hessian_suite(1, 20),
            f_gradient_suite(1, 10),
            expr_derivative_suite(1, 50),
            jacobian_suite(1, 5),
            ellipticity_suite(1, 50),
            offdiag_suite(1, 10),
        ] {
            assert!(result.passed(), "{result:?}");
        }
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = rng_for(3, 0);
        for n in 2..=6 {
            let r = random_rotation(&mut rng, n);
            for i in 0..n {
                for j in 0..n {
                    let d: f64 = (0..n).map(|p| r[i * n + p] * r[j * n + p]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }
}
