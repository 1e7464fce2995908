//! Empirical constant of the weighted estimate
//! `LHS <= C (∬ e^{-2λφ}|Lv|² + boundary terms at x = 0)`.
//!
//! Test functions are given in conjugated form `w = e^{-λφ} v`, so every
//! weighted quantity is evaluated without forming `e^{±λφ}`:
//! `e^{-λφ} ∂_x^k v = E_k` with `E_k = Σ C(k,j) B_{k-j} ∂_x^j w`.

use rayon::prelude::*;
use serde::Serialize;

use super::{conjugated_operator, CarlemanConfig, CarlemanWeight, LowerOrder, TimeWindow, WDerivatives};
use crate::error::Result;
use crate::grid::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditRow {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs_interior: f64,
    /// Boundary terms at `x = 0`, the ones the estimate keeps.
    pub rhs_boundary0: f64,
    /// Same terms at `x = 1`, reported only.
    pub rhs_boundary1: f64,
    /// `lhs / (rhs_interior + rhs_boundary0)`.
    pub c_hat: f64,
    pub pass: bool,
    /// Both sides vanish.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    /// Every non-degenerate row with `λ >= λ0` passes.
    pub all_pass: bool,
}

impl AuditReport {
    pub fn row(&self, lambda: f64) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.lambda == lambda)
    }
}

/// `e^{-λφ} ∂_x^k (e^{λφ} w)` for `k <= 3` and `e^{-λφ}(σ v_xx)_xx`.
fn conjugated_derivatives(wd: &WDerivatives, weight: &CarlemanWeight, n: usize, i: usize) -> ([f64; 4], f64) {
    let l = weight.lambda();
    let a: [f64; 4] = std::array::from_fn(|k| l * weight.phi_x(n, i, k + 1));
    let b = [
        1.0,
        a[0],
        a[0] * a[0] + a[1],
        a[0].powi(3) + 3.0 * a[0] * a[1] + a[2],
        a[0].powi(4) + 6.0 * a[0] * a[0] * a[1] + 4.0 * a[0] * a[2] + 3.0 * a[1] * a[1] + a[3],
    ];
    const C: [[f64; 5]; 5] = [
        [1.0, 0.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0, 0.0],
        [1.0, 2.0, 1.0, 0.0, 0.0],
        [1.0, 3.0, 3.0, 1.0, 0.0],
        [1.0, 4.0, 6.0, 4.0, 1.0],
    ];
    let e: [f64; 5] =
        std::array::from_fn(|k| (0..=k).map(|j| C[k][j] * b[k - j] * wd.d[j].at(n, i)).sum());
    let s: [f64; 3] = std::array::from_fn(|k| weight.sigma_derivative(k)[i]);
    let fourth = s[2] * e[2] + 2.0 * s[1] * e[3] + s[0] * e[4];
    ([e[0], e[1], e[2], e[3]], fourth)
}

fn boundary_terms(wd: &WDerivatives, weight: &CarlemanWeight, window: &TimeWindow, i: usize) -> f64 {
    let grid = *wd.grid();
    let l = weight.lambda();
    let s = weight.sigma_derivative(0)[i];
    window.integrate_t(&grid, |n| {
        let (e, _) = conjugated_derivatives(wd, weight, n, i);
        let px = weight.phi_x(n, i, 1);
        (l * px).powi(3) * s * s * e[2] * e[2] + l * px * s * s * e[3] * e[3]
    })
}

/// One row at the weight's `λ`.
pub fn audit_row(
    wd: &WDerivatives,
    weight: &CarlemanWeight,
    q: &LowerOrder,
    cfg: &CarlemanConfig,
) -> Result<AuditRow> {
    let grid = *wd.grid();
    q.check(&grid, Some(cfg.m))?;
    let pw = conjugated_operator(wd, weight, q, cfg.eta)?;
    let window = TimeWindow::new(&grid, cfg.eta)?;
    let l = weight.lambda();
    let lhs = window.integrate(&grid, |n, i| {
        let (e, fourth) = conjugated_derivatives(wd, weight, n, i);
        let lp = l * weight.phi(n, i);
        let vt = wd.t.at(n, i) + l * weight.phi_t(n, i) * wd.d[0].at(n, i);
        let lp2 = lp * lp;
        (vt * vt + fourth * fourth) / lp
            + lp * (lp2 * (lp2 * (lp2 * e[0] * e[0] + e[1] * e[1]) + e[2] * e[2]) + e[3] * e[3])
    });
    let rhs_interior = window.integrate(&grid, |n, i| pw.at(n, i).powi(2));
    let rhs_boundary0 = boundary_terms(wd, weight, &window, 0);
    let rhs_boundary1 = boundary_terms(wd, weight, &window, grid.x_len() - 1);
    let rhs = rhs_interior + rhs_boundary0;
    let degenerate = lhs == 0.0 && rhs == 0.0;
    let c_hat = if degenerate { f64::NAN } else { lhs / rhs };
    Ok(AuditRow {
        lambda: l,
        lhs,
        rhs_interior,
        rhs_boundary0,
        rhs_boundary1,
        c_hat,
        pass: degenerate || (c_hat.is_finite() && c_hat <= cfg.c_cap),
        degenerate,
    })
}

/// Rows for every `λ` of the grid, evaluated in parallel.
pub fn carleman_audit(
    wd: &WDerivatives,
    weight: &CarlemanWeight,
    q: &LowerOrder,
    cfg: &CarlemanConfig,
) -> Result<AuditReport> {
    cfg.validate(wd.grid().t_final())?;
    let rows: Vec<AuditRow> = cfg
        .lambda_grid
        .par_iter()
        .map(|&l| audit_row(wd, &weight.with_lambda(l), q, cfg))
        .collect::<Result<_>>()?;
    let all_pass = rows.iter().filter(|r| r.lambda >= cfg.lambda0).all(|r| r.pass);
    Ok(AuditReport { rows, all_pass })
}

/// `v = e^{λφ} w` on the window rows, zero elsewhere.
pub fn conjugate_lift(w: &Trajectory, weight: &CarlemanWeight, eta: f64) -> Result<Trajectory> {
    let grid = *w.grid();
    grid.ensure_same(weight.grid(), "weight")?;
    let window = TimeWindow::new(&grid, eta)?;
    let mut v = Trajectory::zeros(grid);
    for n in window.nodes() {
        for i in 0..grid.x_len() {
            v.row_mut(n)[i] = (weight.lambda() * weight.phi(n, i)).exp() * w.at(n, i);
        }
    }
    Ok(v)
}
