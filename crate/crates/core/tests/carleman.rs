//! Weighted-estimate pipeline on the single bump and on seeded ensembles.

use ks_core::carleman::{
    bump_member, carleman_audit, conjugate_decompose, inner_product_ledger, lambda_scan,
    make_default_weight, random_ensemble, CarlemanConfig, CarlemanWeight, EnsembleMember,
    EnsembleSpec, LowerOrder, WDerivatives,
};
use ks_core::error::Hypothesis;
use ks_core::grid::{l2q_squared, GridSpec, ScalarField1D, Trajectory};
use ks_core::KsError;
use proptest::prelude::*;

const ETA: f64 = 0.2;

fn weight(nx: usize, nt: usize) -> (GridSpec, CarlemanWeight) {
    let g = GridSpec::new(nx, nt, 2.0).unwrap();
    let w = make_default_weight(g, &ScalarField1D::constant(g, 1.0), 1.0).unwrap();
    (g, w)
}

/// `||(P1 + P2 + R)w - Pw|| / ||Pw||` with the split built from stencil
/// derivatives and `Pw` from closed-form ones.
fn consistency_residual(nx: usize, lambda: f64) -> f64 {
    let (g, w) = weight(nx, 2 * nx);
    let w = w.with_lambda(lambda);
    let m = bump_member();
    let exact = conjugate_decompose(&m.derivatives(g, ETA).unwrap(), &w, &LowerOrder::zero(), ETA)
        .unwrap();
    let fd = WDerivatives::from_trajectory(&m.trajectory(g, ETA).unwrap()).unwrap();
    let d = conjugate_decompose(&fd, &w, &LowerOrder::zero(), ETA).unwrap();
    let split = d.p1.axpy(1.0, &d.p2).unwrap().axpy(1.0, &d.r).unwrap();
    (l2q_squared(&split.sub(&exact.direct).unwrap()) / l2q_squared(&exact.direct)).sqrt()
}

#[test]
fn split_converges_to_conjugated_operator() {
    for lambda in [2.0, 8.0] {
        let (a, b) = (consistency_residual(32, lambda), consistency_residual(64, lambda));
        assert!(b < a / 3.0, "lambda {lambda}: {a:e} -> {b:e}");
    }
}

#[test]
fn ledger_balance_improves_under_refinement() {
    let mismatch = |nx: usize| {
        let (g, w) = weight(nx, 2 * nx);
        let wd = bump_member().derivatives(g, ETA).unwrap();
        inner_product_ledger(&wd, &w.with_lambda(8.0), ETA).unwrap().mismatch
    };
    let (a, b) = (mismatch(32), mismatch(64));
    assert!(b < a && b <= 1e-4, "{a:e} -> {b:e}");
}

#[test]
fn itemized_terms_sum_to_reported_total() {
    let (g, w) = weight(48, 96);
    let wd = bump_member().derivatives(g, ETA).unwrap();
    let l = inner_product_ledger(&wd, &w.with_lambda(4.0), ETA).unwrap();
    let sum = l.i_w + l.i_wx + l.i_w2x + l.i_w3x + l.r0 + l.i_x();
    assert!((sum - l.itemized).abs() <= 1e-12 * l.itemized.abs());
    assert!((l.delta_hat * l.norm - (l.direct - l.i_x())).abs() <= 1e-10 * l.direct.abs());
}

#[test]
fn small_ensemble_has_positive_lower_bound() {
    let (g, w) = weight(48, 96);
    let spec = EnsembleSpec {
        members: 6,
        ..Default::default()
    };
    let members: Vec<WDerivatives> = random_ensemble(&spec)
        .unwrap()
        .iter()
        .map(|m| m.derivatives(g, ETA).unwrap())
        .collect();
    let rep = lambda_scan(&members, &w, &[2.0, 4.0, 8.0], ETA).unwrap();
    assert!(rep.rows.iter().all(|r| r.min_delta_hat > 0.0), "{:?}", rep.rows);
    assert_eq!(rep.lambda0, Some(2.0));
}

#[test]
fn audit_constant_is_finite_and_refinement_stable() {
    let c16 = |nx: usize| {
        let (g, w) = weight(nx, 2 * nx);
        let wd = bump_member().derivatives(g, ETA).unwrap();
        let rep = carleman_audit(&wd, &w, &LowerOrder::zero(), &CarlemanConfig::with_defaults(2.0))
            .unwrap();
        assert!(rep.all_pass, "{:?}", rep.rows);
        rep.row(16.0).unwrap().c_hat
    };
    let (a, b) = (c16(32), c16(64));
    assert!((a / b - 1.0).abs() <= 0.3, "{a} vs {b}");
}

#[test]
fn steep_sigma_is_rejected_by_the_coupling_hypothesis() {
    let g = GridSpec::new(32, 64, 2.0).unwrap();
    let sigma = ScalarField1D::from_fn(g, |x| 1.0 + 10.0 * x).unwrap();
    match make_default_weight(g, &sigma, 1.0) {
        Err(KsError::HypothesisViolation { hypothesis, .. }) => {
            assert_eq!(hypothesis, Hypothesis::Hip4B)
        }
        other => panic!("expected hip4B violation, got {other:?}"),
    }
}

#[test]
fn lower_order_terms_above_the_bound_are_rejected() {
    let (g, w) = weight(32, 64);
    let wd = bump_member().derivatives(g, ETA).unwrap();
    let q = LowerOrder {
        q0: Some(Trajectory::from_fn(g, |_, _| 5.0).unwrap()),
        q1: None,
        q2: None,
    };
    let err = carleman_audit(&wd, &w, &q, &CarlemanConfig::with_defaults(2.0));
    assert!(matches!(err, Err(KsError::InvalidInput(_))), "{err:?}");
}

#[test]
fn function_outside_the_window_is_rejected() {
    let (g, w) = weight(32, 64);
    let wd = WDerivatives::from_trajectory(&Trajectory::from_fn(g, |_, x| x * x).unwrap()).unwrap();
    let err = conjugate_decompose(&wd, &w, &LowerOrder::zero(), ETA);
    assert!(matches!(err, Err(KsError::LayerViolation { .. })), "{err:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn split_identity_holds_for_random_members(
        coeffs in proptest::collection::vec(-1.0f64..1.0, 1..5),
        lambda in 0.5f64..20.0,
    ) {
        let (g, w) = weight(24, 48);
        let m = EnsembleMember { coeffs };
        let wd = m.derivatives(g, ETA).unwrap();
        let d = conjugate_decompose(&wd, &w.with_lambda(lambda), &LowerOrder::zero(), ETA).unwrap();
        prop_assert!(d.identity_residual <= 1e-10, "{}", d.identity_residual);
    }

    #[test]
    fn audit_left_side_grows_with_lambda(
        coeffs in proptest::collection::vec(-1.0f64..1.0, 1..4),
    ) {
        let (g, w) = weight(24, 48);
        let wd = EnsembleMember { coeffs }.derivatives(g, ETA).unwrap();
        // the 1/(λφ)-weighted terms dominate for small λ; growth starts once
        // the λ⁷ term takes over
        let cfg = CarlemanConfig {
            lambda_grid: vec![8.0, 16.0, 32.0],
            ..CarlemanConfig::with_defaults(2.0)
        };
        let rep = carleman_audit(&wd, &w, &LowerOrder::zero(), &cfg).unwrap();
        for p in rep.rows.windows(2) {
            prop_assert!(p[1].lhs >= p[1].lambda / p[0].lambda * p[0].lhs);
        }
    }
}
