//! Carleman weight, conjugated-operator decomposition and numerical audit of
//! the weighted estimate for `L v = v_t + (σ v_xx)_xx + q2 v_xx + q1 v_x + q0 v`.
//!
//! All weighted integrals are taken over the time window `[η, T - η]`, where
//! `φ` stays bounded. Test functions must vanish outside the window.

mod audit;
mod decompose;
mod ensemble;
mod jet;
mod ledger;
mod weight;

pub use audit::{audit_row, carleman_audit, conjugate_lift, AuditReport, AuditRow};
pub use decompose::{conjugate_decompose, conjugated_operator, Decomposition};
pub use ensemble::{bump_member, bump_test_function, random_ensemble, EnsembleMember, EnsembleSpec};
pub use ledger::{
    inner_product_ledger, lambda_scan, weighted_norm, Ledger, ScanReport, ScanRow,
};
pub use weight::{
    make_default_weight, BumpProfile, CarlemanWeight, SpatialProfile, SqrtProfile, TimeProfile,
};

use crate::error::{KsError, Result};
use crate::grid::{diff_t_traj, diff_x_traj, gregory_weights, trapezoid_weights, GridSpec, Trajectory};

/// Parameters of the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanConfig {
    /// Uniform bound on the lower-order coefficients.
    pub m: f64,
    pub lambda_grid: Vec<f64>,
    /// Width of the excluded time layers at `t = 0` and `t = T`.
    pub eta: f64,
    pub ident_tol: f64,
    pub ledger_tol: f64,
    /// Largest acceptable empirical constant.
    pub c_cap: f64,
    /// Declared `λ0`; rows with `λ >= λ0` must pass.
    pub lambda0: f64,
}

impl CarlemanConfig {
    pub fn with_defaults(t_final: f64) -> Self {
        Self {
            m: 1.0,
            lambda_grid: vec![2.0, 4.0, 8.0, 16.0],
            eta: t_final / 10.0,
            ident_tol: 1e-6,
            ledger_tol: 1e-4,
            c_cap: 1e3,
            lambda0: 2.0,
        }
    }

    pub fn validate(&self, t_final: f64) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(KsError::InvalidInput("lambda grid is empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l > 0.0)) {
            return Err(KsError::InvalidInput("lambda values must be positive".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KsError::InvalidInput(
                "lambda grid must be strictly increasing".into(),
            ));
        }
        if !(self.eta > 0.0 && self.eta < 0.5 * t_final) {
            return Err(KsError::InvalidInput(format!(
                "eta = {} must lie in (0, T/2)",
                self.eta
            )));
        }
        if !(self.m >= 0.0 && self.c_cap > 0.0) {
            return Err(KsError::InvalidInput("m must be >= 0 and c_cap > 0".into()));
        }
        Ok(())
    }
}

/// Time nodes used for weighted quadrature: the smallest node range covering
/// `[η, T - η]`, kept away from the singular end rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub lo: usize,
    pub hi: usize,
}

impl TimeWindow {
    pub fn new(grid: &GridSpec, eta: f64) -> Result<Self> {
        let t = grid.t_final();
        if !(eta > 0.0 && eta < 0.5 * t) {
            return Err(KsError::InvalidInput(format!("eta = {eta} outside (0, T/2)")));
        }
        let dt = grid.dt();
        let lo = ((eta / dt) * (1.0 + 1e-12)).floor() as usize;
        let hi = (((t - eta) / dt) * (1.0 - 1e-12)).ceil() as usize;
        Ok(Self {
            lo: lo.max(1),
            hi: hi.min(grid.nt() - 1),
        })
    }

    pub fn nodes(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.hi
    }

    /// Trapezoid rule over the window rows times the end-corrected rule in
    /// `x`. Integrands do not vanish at `x = 0, 1`, so plain trapezoid in `x`
    /// would leave an `O(h^2)` boundary error; in time they vanish smoothly.
    pub fn integrate(&self, grid: &GridSpec, f: impl Fn(usize, usize) -> f64) -> f64 {
        let wt = trapezoid_weights(self.hi - self.lo + 1, grid.dt());
        let wx = gregory_weights(grid.x_len(), grid.dx());
        let mut total = 0.0;
        for (k, n) in self.nodes().enumerate() {
            let row: f64 = wx.iter().enumerate().map(|(i, w)| w * f(n, i)).sum();
            total += wt[k] * row;
        }
        total
    }

    /// Trapezoid rule over the window rows of a function of time.
    pub fn integrate_t(&self, grid: &GridSpec, f: impl Fn(usize) -> f64) -> f64 {
        let wt = trapezoid_weights(self.hi - self.lo + 1, grid.dt());
        self.nodes().enumerate().map(|(k, n)| wt[k] * f(n)).sum()
    }

    /// Fails when `w` is not negligible at nodes strictly outside `[η, T - η]`.
    pub fn check_layers(&self, w: &Trajectory, eta: f64) -> Result<()> {
        let grid = w.grid();
        let scale = w.max_abs();
        if scale == 0.0 {
            return Ok(());
        }
        let tol = 1e-12 * (1.0 + grid.t_final());
        let mut outside = 0.0_f64;
        for n in 0..grid.t_len() {
            let t = grid.t(n);
            if t < eta - tol || t > grid.t_final() - eta + tol {
                outside = outside.max(w.row(n).iter().fold(0.0_f64, |m, v| m.max(v.abs())));
            }
        }
        if outside > 1e-12 * scale {
            return Err(KsError::LayerViolation {
                max_outside: outside / scale,
            });
        }
        Ok(())
    }
}

/// A test function with its time derivative and first four space derivatives.
#[derive(Debug, Clone)]
pub struct WDerivatives {
    /// `d[0] = w`, `d[k] = ∂_x^k w` for `k <= 4`.
    pub d: [Trajectory; 5],
    pub t: Trajectory,
}

impl WDerivatives {
    /// Derivatives by the grid stencils.
    pub fn from_trajectory(w: &Trajectory) -> Result<Self> {
        Ok(Self {
            d: [
                w.clone(),
                diff_x_traj(w, 1)?,
                diff_x_traj(w, 2)?,
                diff_x_traj(w, 3)?,
                diff_x_traj(w, 4)?,
            ],
            t: diff_t_traj(w)?,
        })
    }

    /// Closed-form derivatives: `f(t, x) = [w, w_x, w_xx, w_xxx, w_xxxx, w_t]`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> [f64; 6]) -> Result<Self> {
        let mut d: [Trajectory; 5] = std::array::from_fn(|_| Trajectory::zeros(grid));
        let mut t = Trajectory::zeros(grid);
        for n in 0..grid.t_len() {
            for i in 0..grid.x_len() {
                let v = f(grid.t(n), grid.x(i));
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(KsError::NonFinite("test function"));
                }
                for k in 0..5 {
                    d[k].row_mut(n)[i] = v[k];
                }
                t.row_mut(n)[i] = v[5];
            }
        }
        Ok(Self { d, t })
    }

    pub fn grid(&self) -> &GridSpec {
        self.d[0].grid()
    }

    pub fn w(&self) -> &Trajectory {
        &self.d[0]
    }
}

/// Lower-order coefficients `q0`, `q1`, `q2` (zero when absent).
#[derive(Debug, Clone, Default)]
pub struct LowerOrder {
    pub q0: Option<Trajectory>,
    pub q1: Option<Trajectory>,
    pub q2: Option<Trajectory>,
}

impl LowerOrder {
    pub fn zero() -> Self {
        Self::default()
    }

    pub(crate) fn at(&self, n: usize, i: usize) -> [f64; 3] {
        let get = |q: &Option<Trajectory>| q.as_ref().map_or(0.0, |q| q.at(n, i));
        [get(&self.q0), get(&self.q1), get(&self.q2)]
    }

    pub fn sup(&self) -> f64 {
        [&self.q0, &self.q1, &self.q2]
            .iter()
            .filter_map(|q| q.as_ref().map(|q| q.max_abs()))
            .fold(0.0, f64::max)
    }

    pub(crate) fn check(&self, grid: &GridSpec, m: Option<f64>) -> Result<()> {
        for q in [&self.q0, &self.q1, &self.q2].into_iter().flatten() {
            grid.ensure_same(q.grid(), "lower-order coefficient")?;
        }
        if let Some(m) = m {
            let s = self.sup();
            if s > m {
                return Err(KsError::InvalidInput(format!(
                    "lower-order coefficients reach {s:e}, above the bound m = {m:e}"
                )));
            }
        }
        Ok(())
    }
}
