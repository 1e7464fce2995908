//! Difference systems, two-sided stability scan and closed-loop recovery on the
//! reference problem `ỹ = (1+t)x²/4`.

use std::f64::consts::PI;

use ks_core::grid::{diff_t_traj, l2q_squared, GridSpec, ScalarField1D, Trajectory};
use ks_core::inverse::{
    difference_system_residual, recover_gamma, reference_problem, stability_report,
    synthesize_measurements, time_derived_difference, InverseConfig, MeasurementSet, StopReason,
};
use ks_core::linear::{clamped_boundary_values, BoundaryData, CoefficientField};
use ks_core::nonlinear::{solve_ks, NonlinearSolveConfig};
use ks_core::KsError;
use proptest::prelude::*;

const GAMMA0: f64 = 0.5;
const T0: f64 = 0.5;

fn tight() -> NonlinearSolveConfig {
    InverseConfig::default().forward
}

fn perturbed(g: GridSpec, s: f64, shape: impl Fn(f64) -> f64) -> ScalarField1D {
    ScalarField1D::from_fn(g, |x| GAMMA0 + s * shape(x)).unwrap()
}

fn sine(x: f64) -> f64 {
    (PI * x).sin()
}

fn solved_pair(g: GridSpec, gamma: &ScalarField1D) -> (CoefficientField, Trajectory, Trajectory) {
    let (c, bd) = reference_problem(g, GAMMA0).unwrap();
    let (yt, _) = solve_ks(&c, &bd, &tight(), &g).unwrap();
    let (y, _) = solve_ks(&c.with_gamma(gamma.clone()).unwrap(), &bd, &tight(), &g).unwrap();
    (c, y, yt)
}

#[test]
fn difference_system_cancels_on_solved_pairs() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let gamma = perturbed(g, 1e-3, sine);
    let (c, y, yt) = solved_pair(g, &gamma);
    let res = difference_system_residual(&y, &yt, &gamma, c.gamma(), &c, &g).unwrap();
    assert!(res <= 1e-6, "{res:e}");
    let u = y.sub(&yt).unwrap();
    for n in 0..g.t_len() {
        let b = clamped_boundary_values(u.row(n), g.dx());
        assert!(b.iter().all(|v| v.abs() <= 1e-10), "step {n}: {b:?}");
    }
}

#[test]
fn identical_pairs_have_zero_difference_residual() {
    let g = GridSpec::new(24, 24, 1.0).unwrap();
    let (c, _) = reference_problem(g, GAMMA0).unwrap();
    let (_, y, yt) = solved_pair(g, c.gamma());
    let res = difference_system_residual(&y, &yt, c.gamma(), c.gamma(), &c, &g).unwrap();
    assert_eq!(res, 0.0);
}

/// `||v - D_t u||` for `f = -1e-3 sin²(πx)`, which keeps `v(0)` clamped.
fn time_derived_gap(nx: usize, nt: usize) -> f64 {
    let g = GridSpec::new(nx, nt, 1.0).unwrap();
    let gamma = perturbed(g, 1e-3, |x| sine(x).powi(2));
    let (c, y, yt) = solved_pair(g, &gamma);
    let u = y.sub(&yt).unwrap();
    let f = ScalarField1D::new(
        c.gamma().values().iter().zip(gamma.values()).map(|(a, b)| a - b).collect(),
        g,
    )
    .unwrap();
    let gamma_c = c.with_gamma(gamma).unwrap();
    let v = time_derived_difference(&u, &f, &yt, &y, &gamma_c, &g).unwrap();
    l2q_squared(&v.sub(&diff_t_traj(&u).unwrap()).unwrap()).sqrt()
}

#[test]
fn time_derived_difference_tracks_time_difference() {
    let (a, b) = (time_derived_gap(32, 64), time_derived_gap(32, 128));
    assert!(a / b >= 1.8, "{a:e} -> {b:e}");
}

fn scan(nx: usize, nt: usize) -> Vec<(f64, f64, f64, f64)> {
    let g = GridSpec::new(nx, nt, 1.0).unwrap();
    let (c, bd) = reference_problem(g, GAMMA0).unwrap();
    [1e-3, 2e-3, 4e-3]
        .iter()
        .map(|&s| {
            let r = stability_report(&c, &perturbed(g, s, sine), &bd, &g, T0, &InverseConfig::default())
                .unwrap();
            assert!(!r.degenerate);
            assert!(r.middle <= r.c_upper * r.far_rhs * (1.0 + 1e-12));
            assert!(r.c_lower * r.lhs <= r.middle * (1.0 + 1e-10));
            (r.lhs, r.middle, r.c_lower, r.c_upper)
        })
        .collect()
}

#[test]
fn stability_scan_is_lipschitz_and_refinement_stable() {
    let coarse = scan(32, 64);
    let slope = {
        let (a, b) = (coarse[0], coarse[2]);
        (b.0 / a.0).ln() / (b.1 / a.1).ln()
    };
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
    let fine = scan(64, 128);
    for (a, b) in coarse.iter().zip(&fine) {
        for (x, y) in [(a.2, b.2), (a.3, b.3)] {
            assert!(x.is_finite() && (x / y - 1.0).abs() <= 0.5, "{x} vs {y}");
        }
    }
}

#[test]
fn snapshot_time_shift_moves_middle_terms_by_order_dt() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let (c, bd) = reference_problem(g, GAMMA0).unwrap();
    let gamma = perturbed(g, 2e-3, sine);
    let cfg = InverseConfig::default();
    let a = stability_report(&c, &gamma, &bd, &g, T0, &cfg).unwrap();
    let b = stability_report(&c, &gamma, &bd, &g, T0 + g.dt(), &cfg).unwrap();
    let rel = (a.middle - b.middle).abs() / a.middle;
    assert!(rel <= 5.0 * g.dt(), "{rel:e} vs dt {:e}", g.dt());
}

#[test]
fn zero_data_is_rejected_by_the_curvature_condition() {
    let g = GridSpec::new(24, 24, 1.0).unwrap();
    let c = CoefficientField::constant(g, 1.0, GAMMA0).unwrap();
    let bd = BoundaryData::zero(g);
    let meas = synthesize_measurements(&c, &bd, &g, T0, 0.0, 1, &tight()).unwrap();
    let err = recover_gamma(&meas, &c, &bd, &g, &InverseConfig::default());
    assert!(matches!(err, Err(KsError::InfConditionViolated { .. })), "{err:?}");
    let err = stability_report(&c, &perturbed(g, 1e-3, sine), &bd, &g, T0, &InverseConfig::default());
    assert!(matches!(err, Err(KsError::InfConditionViolated { .. })), "{err:?}");
}

#[test]
fn unperturbed_data_recovers_the_anchor() {
    let g = GridSpec::new(24, 48, 1.0).unwrap();
    let (c, bd) = reference_problem(g, GAMMA0).unwrap();
    let meas = synthesize_measurements(&c, &bd, &g, T0, 0.0, 1, &tight()).unwrap();
    let (gh, rep) = recover_gamma(&meas, &c, &bd, &g, &InverseConfig::default()).unwrap();
    assert_eq!(rep.stop, StopReason::GradientTolerance);
    let err = gh
        .values()
        .iter()
        .map(|v| (v - GAMMA0).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err:e}");
}

#[test]
fn noise_free_closed_loop_recovers_the_perturbation() {
    let g = GridSpec::new(32, 64, 1.0).unwrap();
    let (c, bd) = reference_problem(g, GAMMA0).unwrap();
    let truth = c.with_gamma(perturbed(g, 5e-3, sine)).unwrap();
    let meas = synthesize_measurements(&truth, &bd, &g, T0, 0.0, 1, &tight()).unwrap();
    let (_, rep) = recover_gamma(&meas, &c, &bd, &g, &InverseConfig::default()).unwrap();
    let rel = rep.relative_error.unwrap();
    assert!(rel <= 0.05, "{rel}");
    for p in rep.trace.windows(2) {
        assert!(p[1].objective <= p[0].objective);
    }
    assert!(rep.forward_solves <= 1 + rep.trace.len() * (InverseConfig::default().modes + 1 + 30));
}

#[test]
fn mismatched_measurements_are_rejected() {
    let g = GridSpec::new(16, 16, 1.0).unwrap();
    let bad = MeasurementSet::new(vec![0.0; 5], vec![0.0; 17], vec![0.0; 17], T0, &g);
    assert!(matches!(bad, Err(KsError::LengthMismatch { .. })));
    let late = MeasurementSet::new(vec![0.0; 17], vec![0.0; 17], vec![0.0; 17], 2.0, &g);
    assert!(matches!(late, Err(KsError::InvalidInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn noise_is_reproducible_and_bounded(seed in any::<u64>(), level in 0.0f64..1e-2) {
        let g = GridSpec::new(16, 16, 1.0).unwrap();
        let (c, bd) = reference_problem(g, GAMMA0).unwrap();
        let a = synthesize_measurements(&c, &bd, &g, T0, level, seed, &tight()).unwrap();
        let b = synthesize_measurements(&c, &bd, &g, T0, level, seed, &tight()).unwrap();
        prop_assert_eq!(&a, &b);
        let clean = synthesize_measurements(&c, &bd, &g, T0, 0.0, seed, &tight()).unwrap();
        for (x, y) in a.trace2.iter().zip(&clean.trace2) {
            prop_assert!((x - y).abs() <= level * y.abs() * (1.0 + 1e-12));
        }
    }
}
