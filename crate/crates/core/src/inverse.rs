//! Recovery of the anti-diffusion coefficient `γ(x)` from the boundary traces
//! `y_xx(t,0)`, `y_xxx(t,0)` and one interior snapshot `y(T0,·)`.
//!
//! With `u = y - ỹ` and `f = γ̃ - γ`, `u` solves the difference system
//! `u_t + (σu_xx)_xx + γu_xx + ỹu_x + ỹ_x u + uu_x = f ỹ_xx` with zero clamped
//! data and zero initial value. Stability bounds `||f||²` by the measurement
//! misfits; recovery minimises the same misfits over a spectral family.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KsError, Result};
use crate::grid::{
    diff_t_traj, diff_uniform, diff_x, diff_x_traj, extract_traces, h1t_h4x_squared,
    hk_t_squared, hk_x_squared, l2q_squared, linf_t_h1x, trapezoid_weights, GridSpec,
    ScalarField1D, Stencil, Trajectory,
};
use crate::linear::{BoundaryData, CoefficientField, LinearSolver};
use crate::nonlinear::{solve_ks, NonlinearSolveConfig};

/// Boundary traces at `x = 0` and the snapshot row nearest `T0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementSet {
    pub trace2: Vec<f64>,
    pub trace3: Vec<f64>,
    pub snapshot: Vec<f64>,
    pub snapshot_time: f64,
    pub snapshot_index: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Coefficient used to synthesize the data, when known.
    pub gamma_true: Option<Vec<f64>>,
    #[serde(skip)]
    grid: Option<GridSpec>,
}

impl MeasurementSet {
    /// Measurements of a given trajectory, without noise.
    pub fn from_trajectory(y: &Trajectory, t0: f64) -> Result<Self> {
        let grid = *y.grid();
        check_t0(&grid, t0)?;
        let tr = extract_traces(y)?;
        let idx = grid.nearest_time_index(t0);
        Ok(Self {
            trace2: tr.second,
            trace3: tr.third,
            snapshot: y.row(idx).to_vec(),
            snapshot_time: t0,
            snapshot_index: idx,
            noise_level: 0.0,
            seed: 0,
            gamma_true: None,
            grid: Some(grid),
        })
    }

    pub fn new(
        trace2: Vec<f64>,
        trace3: Vec<f64>,
        snapshot: Vec<f64>,
        t0: f64,
        grid: &GridSpec,
    ) -> Result<Self> {
        check_t0(grid, t0)?;
        for (what, v, n) in [
            ("trace2", &trace2, grid.t_len()),
            ("trace3", &trace3, grid.t_len()),
            ("snapshot", &snapshot, grid.x_len()),
        ] {
            if v.len() != n {
                return Err(KsError::LengthMismatch {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|a| !a.is_finite()) {
                return Err(KsError::NonFinite(what));
            }
        }
        Ok(Self {
            trace2,
            trace3,
            snapshot,
            snapshot_time: t0,
            snapshot_index: grid.nearest_time_index(t0),
            noise_level: 0.0,
            seed: 0,
            gamma_true: None,
            grid: Some(*grid),
        })
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        match &self.grid {
            Some(g) => g.ensure_same(grid, "measurements"),
            None => Ok(()),
        }
    }

    /// Multiplies every value by `1 + level·U[-1,1]`, drawing in the order
    /// trace2, trace3, snapshot.
    fn add_noise(&mut self, level: f64, seed: u64) {
        self.noise_level = level;
        self.seed = seed;
        if level == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in self
            .trace2
            .iter_mut()
            .chain(self.trace3.iter_mut())
            .chain(self.snapshot.iter_mut())
        {
            *v *= 1.0 + level * rng.gen_range(-1.0..=1.0);
        }
    }
}

fn check_t0(grid: &GridSpec, t0: f64) -> Result<()> {
    if !(t0 > 0.0 && t0 <= grid.t_final()) {
        return Err(KsError::InvalidInput(format!(
            "snapshot time {t0} must lie in (0, {}]",
            grid.t_final()
        )));
    }
    Ok(())
}

/// Admissible set, regularization and optimizer controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseConfig {
    /// Cap on `||γ||_∞`.
    pub m1: f64,
    /// Cap on the discrete `H^1(0,T;H^4(0,1))` norm of trajectories.
    pub m2: f64,
    /// Required `inf |ỹ_xx(T0,·)|`.
    pub r_floor: f64,
    pub tikhonov_alpha: f64,
    pub max_outer: usize,
    pub grad_tol: f64,
    /// Number of non-constant modes.
    pub modes: usize,
    /// Forward-difference step in the spectral coordinates.
    pub fd_step: f64,
    #[serde(skip)]
    pub forward: NonlinearSolveConfig,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            m1: 10.0,
            m2: 1e8,
            r_floor: 1e-2,
            tikhonov_alpha: 1e-10,
            max_outer: 20,
            grad_tol: 1e-14,
            modes: 8,
            fd_step: 1e-4,
            forward: NonlinearSolveConfig {
                picard_tol: 1e-13,
                ..Default::default()
            },
        }
    }
}

impl InverseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m2 > 0.0 && self.r_floor > 0.0) {
            return Err(KsError::InvalidInput("M1, M2 and r_floor must be positive".into()));
        }
        if !(self.tikhonov_alpha >= 0.0) {
            return Err(KsError::InvalidInput("tikhonov_alpha must be >= 0".into()));
        }
        if self.max_outer == 0 {
            return Err(KsError::InvalidInput("max_outer must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.fd_step > 0.0) {
            return Err(KsError::InvalidInput("grad_tol and fd_step must be positive".into()));
        }
        self.forward.validate()
    }
}

/// Forward solve with the admissible-set checks.
fn forward(
    coeff: &CoefficientField,
    bd: &BoundaryData,
    grid: &GridSpec,
    cfg: &InverseConfig,
) -> Result<Trajectory> {
    let gmax = coeff.gamma().max_abs();
    if gmax > cfg.m1 {
        return Err(KsError::InvalidInput(format!(
            "||gamma||_inf = {gmax:e} exceeds M1 = {:e}",
            cfg.m1
        )));
    }
    let (y, _) = solve_ks(coeff, bd, &cfg.forward, grid)?;
    let norm = h1t_h4x_squared(&y)?.sqrt();
    if norm > cfg.m2 {
        return Err(KsError::InvalidInput(format!(
            "trajectory norm {norm:e} exceeds M2 = {:e}",
            cfg.m2
        )));
    }
    Ok(y)
}

/// `inf_x |ỹ_xx(T0, x)|` on the snapshot row.
pub fn snapshot_curvature_floor(y: &Trajectory, t0: f64) -> Result<f64> {
    let grid = *y.grid();
    let row = y.profile(grid.nearest_time_index(t0));
    Ok(diff_x(&row, 2)?
        .values()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs())))
}

fn check_inf_condition(ytilde: &Trajectory, t0: f64, floor: f64) -> Result<()> {
    let inf = snapshot_curvature_floor(ytilde, t0)?;
    if !(inf >= floor) {
        return Err(KsError::InfConditionViolated { inf, floor });
    }
    Ok(())
}

/// Solves the forward problem for `coeff` and records its measurements, with
/// seeded uniform relative noise when `noise_level > 0`.
pub fn synthesize_measurements(
    coeff: &CoefficientField,
    bd: &BoundaryData,
    grid: &GridSpec,
    t0: f64,
    noise_level: f64,
    seed: u64,
    forward_cfg: &NonlinearSolveConfig,
) -> Result<MeasurementSet> {
    if !(noise_level >= 0.0) {
        return Err(KsError::InvalidInput("noise level must be >= 0".into()));
    }
    let (y, _) = solve_ks(coeff, bd, forward_cfg, grid)?;
    let mut m = MeasurementSet::from_trajectory(&y, t0)?;
    m.gamma_true = Some(coeff.gamma().values().to_vec());
    m.add_noise(noise_level, seed);
    Ok(m)
}

/// `L2(Q)` norm of the discrete difference-system residual for `u = y - ỹ`.
///
/// Centered products make `y D1 y - ỹ D1 ỹ = ỹ D1 u + u D1 ỹ + u D1 u` exact, so
/// the value equals the difference of the two scheme residuals; it is a
/// structural check on solved pairs.
pub fn difference_system_residual(
    y: &Trajectory,
    ytilde: &Trajectory,
    gamma: &ScalarField1D,
    gamma_tilde: &ScalarField1D,
    coeff: &CoefficientField,
    grid: &GridSpec,
) -> Result<f64> {
    for (what, g) in [("y", y.grid()), ("ytilde", ytilde.grid())] {
        grid.ensure_same(g, what)?;
    }
    grid.ensure_same(gamma.grid(), "gamma")?;
    grid.ensure_same(gamma_tilde.grid(), "gamma_tilde")?;
    let c = coeff.with_gamma(gamma.clone())?;
    let u = y.sub(ytilde)?;
    let f: Vec<f64> = gamma_tilde
        .values()
        .iter()
        .zip(gamma.values())
        .map(|(a, b)| a - b)
        .collect();
    let d1 = Stencil::new(1, grid.x_len(), grid.dx())?;
    let d2 = Stencil::new(2, grid.x_len(), grid.dx())?;
    let h2 = grid.dx() * grid.dx();
    let h4 = h2 * h2;
    let s = c.sigma().values();
    let g = c.gamma().values();
    // interior value of the spatial part of the difference system at level n
    let level = |n: usize| -> Vec<f64> {
        let (ur, yr) = (u.row(n), ytilde.row(n));
        let mut out = vec![0.0; grid.x_len()];
        for i in 2..=grid.nx() - 2 {
            let (sm, s0, sp) = (s[i - 1], s[i], s[i + 1]);
            let flux = (sm * ur[i - 2] - (2.0 * sm + 2.0 * s0) * ur[i - 1]
                + (sm + 4.0 * s0 + sp) * ur[i]
                - (2.0 * s0 + 2.0 * sp) * ur[i + 1]
                + sp * ur[i + 2])
                / h4;
            let anti = g[i] * (ur[i - 1] - 2.0 * ur[i] + ur[i + 1]) / h2;
            let du = d1.apply_at(ur, i);
            let conv = yr[i] * du + ur[i] * d1.apply_at(yr, i) + ur[i] * du;
            out[i] = flux + anti + conv - f[i] * d2.apply_at(yr, i);
        }
        out
    };
    let dt = grid.dt();
    let mut res = Trajectory::zeros(*grid);
    let mut prev = level(0);
    for n in 0..grid.nt() {
        let next = level(n + 1);
        let row = res.row_mut(n + 1);
        for i in 2..=grid.nx() - 2 {
            row[i] = (u.at(n + 1, i) - u.at(n, i)) / dt + 0.5 * (prev[i] + next[i]);
        }
        prev = next;
    }
    Ok(l2q_squared(&res).sqrt())
}

/// `v = u_t` from the time-derived difference system
/// `v_t + (σv_xx)_xx + γv_xx + ỹv_x + ỹ_x v = f ỹ_xxt - (u y_xt + u_x y_t)`
/// with `v(0) = f ỹ_xx(0)` and zero clamped data. The initial value does not
/// meet the clamped conditions, so it is projected and not checked.
pub fn time_derived_difference(
    u: &Trajectory,
    f: &ScalarField1D,
    ytilde: &Trajectory,
    y: &Trajectory,
    coeff: &CoefficientField,
    grid: &GridSpec,
) -> Result<Trajectory> {
    for (what, g) in [("u", u.grid()), ("ytilde", ytilde.grid()), ("y", y.grid())] {
        grid.ensure_same(g, what)?;
    }
    grid.ensure_same(f.grid(), "f")?;
    let yt_xx = diff_x_traj(ytilde, 2)?;
    let yt_xxt = diff_t_traj(&yt_xx)?;
    let yt_x = diff_x_traj(ytilde, 1)?;
    let y_t = diff_t_traj(y)?;
    let y_xt = diff_t_traj(&diff_x_traj(y, 1)?)?;
    let u_x = diff_x_traj(u, 1)?;
    let fv = f.values();
    let source = Trajectory::from_rows(
        (0..grid.t_len())
            .map(|n| {
                (0..grid.x_len())
                    .map(|i| {
                        let g = u.at(n, i) * y_xt.at(n, i) + u_x.at(n, i) * y_t.at(n, i);
                        fv[i] * yt_xxt.at(n, i) - g
                    })
                    .collect()
            })
            .collect(),
        *grid,
    )?;
    let v0 = ScalarField1D::new(
        (0..grid.x_len()).map(|i| fv[i] * yt_xx.at(0, i)).collect(),
        *grid,
    )?;
    let c = coeff
        .clone()
        .with_lower_order(Some(ytilde.clone()), Some(yt_x))?;
    let bd = BoundaryData::zero(*grid).with_initial(v0)?;
    LinearSolver::default().solve_linear_full_unchecked(&c, &bd, &source, grid)
}

/// The four squared measurement misfits of a pair of trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementTerms {
    /// `||Δy_xx(·,0)||²_{H^1(0,T)}`.
    pub trace2_h1: f64,
    /// `||Δy_xxx(·,0)||²_{H^1(0,T)}`.
    pub trace3_h1: f64,
    /// `||Δy(T0)||²_{H^4(0,1)}`.
    pub snapshot_h4: f64,
    /// `||Δy(T0)||⁴_{H^1(0,1)}`.
    pub snapshot_h1_quartic: f64,
}

impl MeasurementTerms {
    pub fn total(&self) -> f64 {
        self.trace2_h1 + self.trace3_h1 + self.snapshot_h4 + self.snapshot_h1_quartic
    }

    fn between(a: &MeasurementSet, b: &MeasurementSet, grid: &GridSpec) -> Result<Self> {
        let d = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x - y).collect() };
        let ds = d(&a.snapshot, &b.snapshot);
        Ok(Self {
            trace2_h1: hk_t_squared(&d(&a.trace2, &b.trace2), grid, 1)?,
            trace3_h1: hk_t_squared(&d(&a.trace3, &b.trace3), grid, 1)?,
            snapshot_h4: hk_x_squared(&ds, grid, 4)?,
            snapshot_h1_quartic: hk_x_squared(&ds, grid, 1)?.powi(2),
        })
    }
}

/// Both sides of the two-sided stability estimate for one pair `(γ, γ̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `||γ - γ̃||²_{L2}`.
    pub lhs: f64,
    pub measurement: MeasurementTerms,
    pub middle: f64,
    /// `||y - ỹ||²_{H^1(0,T;H^4(0,1))}`.
    pub regularity_h1h4: f64,
    /// `||y - ỹ||⁴_{L^∞(0,T;H^1(0,1))}`.
    pub regularity_linf_h1: f64,
    pub far_rhs: f64,
    /// `middle / lhs`; its inverse is the empirical stability constant.
    pub c_lower: f64,
    /// `middle / far_rhs`.
    pub c_upper: f64,
    /// `γ = γ̃`: every term vanishes and the ratios are undefined.
    pub degenerate: bool,
    /// `inf |ỹ_xx(T0,·)|`.
    pub inf_curvature: f64,
}

pub fn stability_report(
    coeff: &CoefficientField,
    gamma_tilde: &ScalarField1D,
    bd: &BoundaryData,
    grid: &GridSpec,
    t0: f64,
    cfg: &InverseConfig,
) -> Result<StabilityReport> {
    cfg.validate()?;
    let c_tilde = coeff.with_gamma(gamma_tilde.clone())?;
    let (y, yt) = rayon::join(
        || forward(coeff, bd, grid, cfg),
        || forward(&c_tilde, bd, grid, cfg),
    );
    let (y, yt) = (y?, yt?);
    let inf_curvature = snapshot_curvature_floor(&yt, t0)?;
    check_inf_condition(&yt, t0, cfg.r_floor)?;
    let diff: Vec<f64> = coeff
        .gamma()
        .values()
        .iter()
        .zip(gamma_tilde.values())
        .map(|(a, b)| a - b)
        .collect();
    let lhs = hk_x_squared(&diff, grid, 0)?;
    let m = MeasurementSet::from_trajectory(&y, t0)?;
    let mt = MeasurementSet::from_trajectory(&yt, t0)?;
    let measurement = MeasurementTerms::between(&m, &mt, grid)?;
    let middle = measurement.total();
    let u = y.sub(&yt)?;
    let regularity_h1h4 = h1t_h4x_squared(&u)?;
    let regularity_linf_h1 = linf_t_h1x(&u)?.powi(4);
    let far_rhs = regularity_h1h4 + regularity_linf_h1;
    let degenerate = lhs == 0.0;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    Ok(StabilityReport {
        lhs,
        measurement,
        middle,
        regularity_h1h4,
        regularity_linf_h1,
        far_rhs,
        c_lower: ratio(middle, lhs),
        c_upper: ratio(middle, far_rhs),
        degenerate,
        inf_curvature,
    })
}

/// Reference data with `σ ≡ 1`, constant `γ̃` and exact solution
/// `ỹ = (1+t)x²/4`, so `ỹ_xx = (1+t)/2` stays away from zero.
pub fn reference_problem(grid: GridSpec, gamma_tilde: f64) -> Result<(CoefficientField, BoundaryData)> {
    let c = CoefficientField::constant(grid, 1.0, gamma_tilde)?;
    let src = Trajectory::from_fn(grid, |t, x| {
        0.25 * x * x + 0.5 * gamma_tilde * (1.0 + t) + (1.0 + t).powi(2) * x.powi(3) / 8.0
    })?;
    let bd = BoundaryData::from_exact(
        grid,
        |t, x| 0.25 * (1.0 + t) * x * x,
        |t, x| 0.5 * (1.0 + t) * x,
        src,
    )?;
    Ok((c, bd))
}

/// Constant plus `modes` alternating `sin(kπx)`, `cos(kπx)` for `k = 1, 2, ...`.
pub fn spectral_basis(grid: &GridSpec, modes: usize) -> Vec<Vec<f64>> {
    (0..=modes)
        .map(|j| {
            grid.xs()
                .iter()
                .map(|&x| {
                    let k = ((j + 1) / 2) as f64;
                    match j {
                        0 => 1.0,
                        j if j % 2 == 1 => (k * PI * x).sin(),
                        _ => (k * PI * x).cos(),
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub l2_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    GradientTolerance,
    /// The objective no longer decreases along the Gauss-Newton direction.
    Stalled,
    MaxOuterReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub objective: f64,
    /// `||γ̂ - γ_true||_{L2}` when the truth is known.
    pub l2_error: Option<f64>,
    /// The same relative to `||γ_true - γ̃||_{L2}`.
    pub relative_error: Option<f64>,
    pub coefficients: Vec<f64>,
    pub trace: Vec<IterationRow>,
    pub stop: StopReason,
    pub forward_solves: usize,
}

/// Weighted residual whose squared norm is the recovery objective.
struct Objective<'a> {
    meas: &'a MeasurementSet,
    base: &'a CoefficientField,
    bd: &'a BoundaryData,
    grid: GridSpec,
    cfg: &'a InverseConfig,
    basis: Vec<Vec<f64>>,
    wt: Vec<f64>,
    wx: Vec<f64>,
}

impl Objective<'_> {
    fn gamma(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = self.base.gamma().values().to_vec();
        for (c, b) in theta.iter().zip(&self.basis) {
            for (gi, bi) in g.iter_mut().zip(b) {
                *gi += c * bi;
            }
        }
        g
    }

    fn push_weighted(&self, out: &mut Vec<f64>, v: &[f64], w: &[f64], scale: f64) {
        out.extend(v.iter().zip(w).map(|(a, wi)| scale * wi.sqrt() * a));
    }

    /// Residual entries: traces in `H^1(0,T)`, snapshot in `H^4(0,1)`, and
    /// `sqrt(α)` times `γ - γ̃` in `H^2(0,1)`.
    fn residual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let gamma = ScalarField1D::new(self.gamma(theta), self.grid)?;
        let c = self.base.with_gamma(gamma)?;
        let y = forward(&c, self.bd, &self.grid, self.cfg)?;
        let m = MeasurementSet::from_trajectory(&y, self.meas.snapshot_time)?;
        let d = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x - y).collect() };
        let mut r = Vec::new();
        for (model, data) in [(&m.trace2, &self.meas.trace2), (&m.trace3, &self.meas.trace3)] {
            let e = d(model, data);
            self.push_weighted(&mut r, &e, &self.wt, 1.0);
            self.push_weighted(&mut r, &diff_uniform(&e, self.grid.dt(), 1)?, &self.wt, 1.0);
        }
        let es = d(&m.snapshot, &self.meas.snapshot);
        self.push_weighted(&mut r, &es, &self.wx, 1.0);
        for k in 1..=4 {
            self.push_weighted(&mut r, &diff_uniform(&es, self.grid.dx(), k)?, &self.wx, 1.0);
        }
        let a = self.cfg.tikhonov_alpha.sqrt();
        if a > 0.0 {
            let p: Vec<f64> = self
                .gamma(theta)
                .iter()
                .zip(self.base.gamma().values())
                .map(|(g, g0)| g - g0)
                .collect();
            self.push_weighted(&mut r, &p, &self.wx, a);
            for k in 1..=2 {
                self.push_weighted(&mut r, &diff_uniform(&p, self.grid.dx(), k)?, &self.wx, a);
            }
        }
        Ok(r)
    }
}

/// Relative objective decrease below which the iteration counts as stalled.
const STALL_DECREASE: f64 = 1e-6;

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|a| a * a).sum()
}

/// Regularized output least squares over `γ = γ̃ + Σ θ_j b_j` by Gauss-Newton
/// with a forward-difference Jacobian (columns solved in parallel),
/// backtracking on the objective and step shrinking to keep `||γ||_∞ <= M1`.
///
/// `base` carries `σ` and the anchor `γ̃`. Accepted iterates never increase
/// the objective.
pub fn recover_gamma(
    meas: &MeasurementSet,
    base: &CoefficientField,
    bd: &BoundaryData,
    grid: &GridSpec,
    cfg: &InverseConfig,
) -> Result<(ScalarField1D, RecoveryReport)> {
    cfg.validate()?;
    meas.check_grid(grid)?;
    let reference = forward(base, bd, grid, cfg)?;
    check_inf_condition(&reference, meas.snapshot_time, cfg.r_floor)?;

    let obj = Objective {
        meas,
        base,
        bd,
        grid: *grid,
        cfg,
        basis: spectral_basis(grid, cfg.modes),
        wt: trapezoid_weights(grid.t_len(), grid.dt()),
        wx: trapezoid_weights(grid.x_len(), grid.dx()),
    };
    let p = cfg.modes + 1;
    let truth_gap = |theta: &[f64]| -> Result<Option<(f64, f64)>> {
        let Some(truth) = &meas.gamma_true else {
            return Ok(None);
        };
        let g = obj.gamma(theta);
        let e: Vec<f64> = g.iter().zip(truth).map(|(a, b)| a - b).collect();
        let s: Vec<f64> = truth
            .iter()
            .zip(base.gamma().values())
            .map(|(a, b)| a - b)
            .collect();
        let err = hk_x_squared(&e, grid, 0)?.sqrt();
        let scale = hk_x_squared(&s, grid, 0)?.sqrt();
        Ok(Some((err, if scale > 0.0 { err / scale } else { f64::NAN })))
    };

    let mut theta = vec![0.0; p];
    let mut r = obj.residual(&theta)?;
    let mut j = sq_norm(&r);
    let mut solves = 2;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxOuterReached;
    for iter in 0..cfg.max_outer {
        let cols: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|k| {
                let mut th = theta.clone();
                th[k] += cfg.fd_step;
                let rk = obj.residual(&th)?;
                Ok(rk.iter().zip(&r).map(|(a, b)| (a - b) / cfg.fd_step).collect())
            })
            .collect::<Result<_>>()?;
        solves += p;
        let jac = DMatrix::from_fn(r.len(), p, |i, k| cols[k][i]);
        let rv = DVector::from_column_slice(&r);
        let grad = 2.0 * jac.transpose() * &rv;
        let grad_norm = grad.norm();
        trace.push(IterationRow {
            iter,
            objective: j,
            grad_norm,
            l2_error: truth_gap(&theta)?.map(|e| e.0),
        });
        if grad_norm <= cfg.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        let svd = jac.clone().svd(true, true);
        let step = svd
            .solve(&(-rv), 1e-13 * svd.singular_values.max())
            .map_err(|e| KsError::InvalidInput(format!("Gauss-Newton step: {e}")))?;
        let mut t = 1.0;
        // keep the candidate inside the admissible ball
        let admissible = |th: &[f64]| obj.gamma(th).iter().all(|g| g.abs() <= cfg.m1);
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if admissible(&cand) {
                let rc = obj.residual(&cand)?;
                solves += 1;
                let jc = sq_norm(&rc);
                if jc < j {
                    accepted = Some((cand, rc, jc));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((c, rc, jc)) => {
                let stalled = j - jc <= STALL_DECREASE * j;
                theta = c;
                r = rc;
                j = jc;
                if stalled {
                    stop = StopReason::Stalled;
                    break;
                }
            }
            None => {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    if stop == StopReason::MaxOuterReached || trace.last().map(|t| t.objective) != Some(j) {
        trace.push(IterationRow {
            iter: trace.len(),
            objective: j,
            grad_norm: f64::NAN,
            l2_error: truth_gap(&theta)?.map(|e| e.0),
        });
    }
    let gap = truth_gap(&theta)?;
    let gamma_hat = ScalarField1D::new(obj.gamma(&theta), *grid)?;
    Ok((
        gamma_hat,
        RecoveryReport {
            objective: j,
            l2_error: gap.map(|g| g.0),
            relative_error: gap.map(|g| g.1),
            coefficients: theta,
            trace,
            stop,
            forward_solves: solves,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_gives_zero_measurements() {
        let g = GridSpec::new(16, 16, 1.0).unwrap();
        let c = CoefficientField::constant(g, 1.0, 3.0).unwrap();
        let m = synthesize_measurements(
            &c,
            &BoundaryData::zero(g),
            &g,
            0.5,
            0.1,
            1,
            &NonlinearSolveConfig::default(),
        )
        .unwrap();
        assert!(m.trace2.iter().chain(&m.trace3).chain(&m.snapshot).all(|v| *v == 0.0));
    }

    #[test]
    fn noise_is_seeded() {
        let g = GridSpec::new(16, 16, 1.0).unwrap();
        let (c, bd) = reference_problem(g, 0.5).unwrap();
        let f = NonlinearSolveConfig::default();
        let a = synthesize_measurements(&c, &bd, &g, 0.5, 1e-3, 9, &f).unwrap();
        let b = synthesize_measurements(&c, &bd, &g, 0.5, 1e-3, 9, &f).unwrap();
        let d = synthesize_measurements(&c, &bd, &g, 0.5, 1e-3, 10, &f).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
        let clean = synthesize_measurements(&c, &bd, &g, 0.5, 0.0, 9, &f).unwrap();
        for (x, y) in a.snapshot.iter().zip(&clean.snapshot) {
            assert!((x - y).abs() <= 1e-3 * y.abs() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn basis_starts_with_constant_then_alternates() {
        let g = GridSpec::new(8, 8, 1.0).unwrap();
        let b = spectral_basis(&g, 3);
        assert_eq!(b.len(), 4);
        assert!(b[0].iter().all(|v| *v == 1.0));
        assert!((b[1][4] - 1.0).abs() < 1e-15); // sin(π/2)
        assert!((b[2][0] - 1.0).abs() < 1e-15); // cos(0)
        assert!(b[3][4].abs() < 1e-15); // sin(π)
    }

    #[test]
    fn identical_coefficients_are_degenerate() {
        let g = GridSpec::new(24, 24, 1.0).unwrap();
        let (c, bd) = reference_problem(g, 0.5).unwrap();
        let rep =
            stability_report(&c, c.gamma(), &bd, &g, 0.5, &InverseConfig::default()).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.middle, 0.0);
        assert_eq!(rep.far_rhs, 0.0);
        assert!(rep.c_lower.is_nan());
    }

    #[test]
    fn g_vanishes_with_u() {
        let g = GridSpec::new(16, 16, 1.0).unwrap();
        let c = CoefficientField::constant(g, 1.0, 0.0).unwrap();
        let y = Trajectory::from_fn(g, |t, x| t * x * x * (1.0 - x) * (1.0 - x)).unwrap();
        let v = time_derived_difference(
            &Trajectory::zeros(g),
            &ScalarField1D::zeros(g),
            &y,
            &y,
            &c,
            &g,
        )
        .unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }
}
