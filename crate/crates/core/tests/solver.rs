use hessquot_core::expr::parse;
use hessquot_core::grid::{Grid, GridFunction};
use hessquot_core::solver::{solve_dirichlet, Psi, ProblemError, SolveError};
use hessquot_core::verify::{convergence_order, manufactured_problem, run_diagnostics};
use hessquot_core::QuotientSpec;

fn max_err(u: &GridFunction, exact: &GridFunction) -> f64 {
    u.values().iter().zip(exact.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn quadratic_is_recovered_to_round_off_2d() {
    let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
    let grid = Grid::unit(2, 11).unwrap();
    let ustar = parse("0.5*(x1^2 + x2^2)", 2).unwrap();
    let (mut prob, exact) = manufactured_problem(&ustar, &grid, spec).unwrap();
    // start strictly below the solution so the homotopy has work to do
    prob.subsolution = parse("0.5*(x1^2 + x2^2) - 0.05*x1*(1 - x1)*x2*(1 - x2)", 2).unwrap();
    let (u, report) = solve_dirichlet(&prob).unwrap();
    assert!(report.converged);
    assert!(max_err(&u, &exact) < 1e-8);
    let last = report.stages.last().unwrap();
    assert_eq!(last.t, 1.0);
    assert!(last.final_residual_inf <= 1e-9);
    assert!(report.stages.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn exp_solution_converges_in_2d() {
    let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
    let ustar = parse("exp((x1^2 + x2^2)/4)", 2).unwrap();
    let study = convergence_order(&[9, 17, 33], |res| {
        manufactured_problem(&ustar, &Grid::unit(2, res).unwrap(), spec)
    })
    .unwrap();
    let order = study.order.expect("not exact");
    assert!((1.7..=2.3).contains(&order), "order {order}, errors {:?}", study.errors);
    assert!(!study.suspicious);
}

#[test]
fn expression_psi_with_positive_psi_z() {
    let spec = QuotientSpec::new(3, 3, 1, 1.0).unwrap();
    let grid = Grid::unit(3, 9).unwrap();
    let (mut prob, _) = manufactured_problem(&parse("0.5*(x1^2 + x2^2 + x3^2)", 3).unwrap(), &grid, spec).unwrap();
    prob.psi = Psi::from_expr(parse("0.5 + 0.2*u + 0.05*p1^2", 3).unwrap(), 3);
    prob.phi = parse("x1^2 + x2^2 + x3^2", 3).unwrap();
    prob.subsolution = prob.phi.clone();
    let (u, report) = solve_dirichlet(&prob).unwrap();
    assert!(report.converged);
    let diag = report.diagnostics.as_ref().unwrap();
    assert!(diag.all_passed(), "{diag:?}");
    assert!(!diag.comparison.skipped);
    assert!(run_diagnostics(&u, &prob).max_principle_ok());
}

#[test]
fn rejects_a_non_subsolution() {
    let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
    let grid = Grid::unit(2, 9).unwrap();
    let (mut prob, _) = manufactured_problem(&parse("0.5*(x1^2 + x2^2)", 2).unwrap(), &grid, spec).unwrap();
    // flatter than the solution but equal on the boundary: F too small
    prob.subsolution = parse("0.5*(x1^2 + x2^2) + 0.2*x1*(1 - x1)*x2*(1 - x2)", 2).unwrap();
    match solve_dirichlet(&prob) {
        Err(SolveError::InvalidProblem(ProblemError::NotSubsolution { .. })) => {}
        other => panic!("expected NotSubsolution, got {other:?}"),
    }
}

#[test]
fn rejects_boundary_mismatch_and_bad_parameters() {
    let spec = QuotientSpec::new(2, 2, 0, 1.0).unwrap();
    let grid = Grid::unit(2, 9).unwrap();
    let (mut prob, _) = manufactured_problem(&parse("0.5*(x1^2 + x2^2)", 2).unwrap(), &grid, spec).unwrap();
    prob.newton.tol_residual = -1.0;
    assert!(matches!(solve_dirichlet(&prob), Err(SolveError::InvalidProblem(_))));
    let (mut prob, _) = manufactured_problem(&parse("0.5*(x1^2 + x2^2)", 2).unwrap(), &grid, spec).unwrap();
    prob.subsolution = parse("u + x1", 2).unwrap();
    assert!(matches!(solve_dirichlet(&prob), Err(SolveError::InvalidProblem(_))));
}
