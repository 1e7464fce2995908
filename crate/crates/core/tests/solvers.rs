//! Manufactured-solution checks of the linear and nonlinear solvers.

use std::f64::consts::PI;

use ks_core::grid::{diff_t_traj, l2q_squared, GridSpec, ScalarField1D, Trajectory};
use ks_core::linear::{clamped_boundary_values, BoundaryData, CoefficientField, LinearSolver};
use ks_core::nonlinear::{
    contraction_probe, smallness_sweep, solve_ks, NonlinearSolveConfig,
};
use ks_core::KsError;

// q(x) = x^2 (1-x)^2 and derivatives
fn q(x: f64) -> f64 {
    x * x * (1.0 - x) * (1.0 - x)
}
fn q1(x: f64) -> f64 {
    2.0 * x - 6.0 * x * x + 4.0 * x * x * x
}
fn q2(x: f64) -> f64 {
    2.0 - 12.0 * x + 12.0 * x * x
}
const Q4: f64 = 24.0;

fn max_err(z: &Trajectory, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let g = z.grid();
    let mut m = 0.0_f64;
    for n in 0..g.t_len() {
        for i in 0..g.x_len() {
            m = m.max((z.at(n, i) - exact(g.t(n), g.x(i))).abs());
        }
    }
    m
}

fn order(e_coarse: f64, e_fine: f64) -> f64 {
    (e_coarse / e_fine).log2()
}

fn principal_error(nx: usize, nt: usize) -> f64 {
    let g = GridSpec::new(nx, nt, 1.0).unwrap();
    let c = CoefficientField::constant(g, 1.0, 0.0).unwrap();
    let f = Trajectory::from_fn(g, |t, x| (-t).exp() * (Q4 - q(x))).unwrap();
    let z0 = ScalarField1D::from_fn(g, q).unwrap();
    let z = LinearSolver::default().solve_principal(&c, &f, &z0, &g).unwrap();
    max_err(&z, |t, x| (-t).exp() * q(x))
}

#[test]
fn principal_solver_converges_at_second_order() {
    let (a, b) = (principal_error(32, 64), principal_error(64, 128));
    assert!(order(a, b) >= 1.7, "order {} ({a:e}, {b:e})", order(a, b));
}

fn full_problem(g: GridSpec) -> (CoefficientField, BoundaryData) {
    let sigma = ScalarField1D::from_fn(g, |x| 1.0 + 0.5 * x).unwrap();
    let c = CoefficientField::new(sigma, ScalarField1D::constant(g, 1.0), 1.0).unwrap();
    let src = Trajectory::from_fn(g, |t, x| {
        let (s, co) = ((PI * x).sin(), (PI * x).cos());
        let zxx = -PI.powi(2) * s;
        let zxxx = -PI.powi(3) * co;
        let zxxxx = PI.powi(4) * s;
        -t.sin() * (1.0 + s) + t.cos() * (zxxx + (1.0 + 0.5 * x) * zxxxx + zxx)
    })
    .unwrap();
    let bd = BoundaryData::from_exact(
        g,
        |t, x| t.cos() * (1.0 + (PI * x).sin()),
        |t, x| t.cos() * PI * (PI * x).cos(),
        src,
    )
    .unwrap();
    (c, bd)
}

#[test]
fn full_solver_converges_with_nonzero_boundary_data() {
    let err = |nx: usize, nt: usize| {
        let g = GridSpec::new(nx, nt, 1.0).unwrap();
        let (c, bd) = full_problem(g);
        let z = LinearSolver::default().solve_linear_full(&c, &bd, &g).unwrap();
        max_err(&z, |t, x| t.cos() * (1.0 + (PI * x).sin()))
    };
    let (a, b) = (err(32, 64), err(64, 128));
    assert!(order(a, b) >= 1.7, "order {} ({a:e}, {b:e})", order(a, b));
}

#[test]
fn lifted_solution_carries_boundary_data() {
    let g = GridSpec::new(64, 128, 1.0).unwrap();
    let (c, bd) = full_problem(g);
    let z = LinearSolver::default().solve_linear_full(&c, &bd, &g).unwrap();
    for n in 0..g.t_len() {
        let b = clamped_boundary_values(z.row(n), g.dx());
        for k in 0..4 {
            assert!((b[k] - bd.h(k)[n]).abs() <= 1e-8, "step {n} trace {k}");
        }
    }
}

#[test]
fn scheme_residual_is_within_tolerance() {
    let g = GridSpec::new(48, 64, 1.0).unwrap();
    let (c, bd) = full_problem(g);
    let s = LinearSolver::default();
    let z = s.solve_linear_full(&c, &bd, &g).unwrap();
    let r = s.scheme_residual(&c, &bd, bd.g(), &z, false).unwrap();
    assert!(r.max_relative <= 1e-10, "{r:?}");
    assert!(r.boundary <= 1e-8, "{r:?}");
}

#[test]
fn time_derived_solution_tracks_time_difference() {
    let err = |nx: usize, nt: usize| {
        let g = GridSpec::new(nx, nt, 1.0).unwrap();
        let c = CoefficientField::constant(g, 1.0, 0.0).unwrap();
        let f = Trajectory::from_fn(g, |t, x| (-t).exp() * (Q4 - q(x))).unwrap();
        let z0 = ScalarField1D::from_fn(g, q).unwrap();
        let s = LinearSolver::default();
        let z = s.solve_principal(&c, &f, &z0, &g).unwrap();
        let qt = s.solve_time_derived(&c, &f, &z0, &g).unwrap();
        l2q_squared(&qt.sub(&diff_t_traj(&z).unwrap()).unwrap()).sqrt()
    };
    let (a, b) = (err(32, 64), err(64, 128));
    assert!(order(a, b) >= 1.0, "order {} ({a:e}, {b:e})", order(a, b));
}

fn nonlinear_problem(g: GridSpec, delta: f64) -> (CoefficientField, BoundaryData) {
    let c = CoefficientField::constant(g, 1.0, 1.0).unwrap();
    let src = Trajectory::from_fn(g, |t, x| {
        let e = (-t).exp();
        delta * e * (Q4 - q(x) + q2(x)) + delta * delta * e * e * q(x) * q1(x)
    })
    .unwrap();
    let y0 = ScalarField1D::from_fn(g, |x| delta * q(x)).unwrap();
    (c, BoundaryData::homogeneous(y0, src).unwrap())
}

#[test]
fn nonlinear_solver_converges_and_contracts() {
    let err = |nx: usize, nt: usize| {
        let g = GridSpec::new(nx, nt, 1.0).unwrap();
        let (c, bd) = nonlinear_problem(g, 1e-2);
        let (y, rep) = solve_ks(&c, &bd, &NonlinearSolveConfig::default(), &g).unwrap();
        assert!(rep.converged);
        assert!(rep.ratios.iter().all(|r| *r < 1.0), "{:?}", rep.ratios);
        assert!(rep.final_residual <= 1e-9, "residual {}", rep.final_residual);
        max_err(&y, |t, x| 1e-2 * (-t).exp() * q(x))
    };
    let (a, b) = (err(32, 64), err(64, 128));
    assert!(order(a, b) >= 1.7, "order {} ({a:e}, {b:e})", order(a, b));
}

#[test]
fn dropping_convection_reproduces_linear_solve() {
    let g = GridSpec::new(32, 32, 1.0).unwrap();
    let (c, bd) = nonlinear_problem(g, 0.5);
    let cfg = NonlinearSolveConfig {
        include_convection: false,
        ..Default::default()
    };
    let (y, rep) = solve_ks(&c, &bd, &cfg, &g).unwrap();
    assert_eq!(rep.iterations, 1);
    let z = LinearSolver::default().solve_linear_full(&c, &bd, &g).unwrap();
    assert!(y.sub(&z).unwrap().max_abs() <= 1e-12 * z.max_abs());
}

#[test]
fn contraction_ratio_shrinks_with_horizon() {
    let probe = |t_final: f64| {
        let g = GridSpec::new(32, 64, t_final).unwrap();
        let (c, _) = nonlinear_problem(g, 0.0);
        let bd = BoundaryData::zero(g);
        // same profiles in rescaled time s = t / T
        let v = Trajectory::from_fn(g, |t, x| 0.1 * (1.0 + t / t_final) * q(x)).unwrap();
        let w = Trajectory::from_fn(g, |t, x| 0.1 * (1.0 - t / t_final) * q(x) * (1.0 + x))
            .unwrap();
        contraction_probe(&c, &bd, &g, &v, &w).unwrap()
    };
    let (full, half) = (probe(1.0), probe(0.5));
    assert!(half < full, "{half} !< {full}");
}

#[test]
fn contraction_ratio_is_small_in_converging_regime() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let (c, bd) = nonlinear_problem(g, 1e-2);
    let v = Trajectory::from_fn(g, |t, x| 1e-2 * (-t).exp() * q(x)).unwrap();
    let w = Trajectory::from_fn(g, |t, x| 1.1e-2 * (-t).exp() * q(x) * (1.0 + 0.1 * x)).unwrap();
    let r = contraction_probe(&c, &bd, &g, &v, &w).unwrap();
    assert!(r < 1.0, "{r}");
}

#[test]
fn smallness_sweep_finds_threshold() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let deltas = [1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4];
    let rep = smallness_sweep(&deltas, &NonlinearSolveConfig::default(), &g, |d| {
        Ok(nonlinear_problem(g, d))
    })
    .unwrap();
    let threshold = rep.threshold.expect("a failing amplitude");
    let converged: Vec<_> = rep.rows.iter().filter(|r| r.converged).collect();
    assert!(!converged.is_empty());
    for w in converged.windows(2) {
        assert!(w[1].max_ratio >= w[0].max_ratio, "{:?}", rep.rows);
    }
    assert!(threshold > 1e-2);
}

#[test]
fn no_convergence_carries_report() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let (c, bd) = nonlinear_problem(g, 1e4);
    match solve_ks(&c, &bd, &NonlinearSolveConfig::default(), &g) {
        Err(KsError::NoConvergence { report, .. }) => assert!(!report.converged),
        Err(KsError::NonFinite(_)) | Err(KsError::ResidualExceeded { .. }) => {}
        other => panic!("expected failure, got {:?}", other.map(|r| r.1)),
    }
}
