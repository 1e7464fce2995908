//! Nonlinear clamped problem `y_t + (σ y_xx)_xx + γ y_xx + y y_x = g` by
//! fixed-point iteration on the lagged convective term.
//!
//! Each iterate solves the full linear problem with source `g - v v_x`, where
//! `v` is the previous iterate. The first iterate drops the convective term.

use serde::Serialize;

use crate::error::{KsError, Result};
use crate::grid::{l2q_squared, trapezoid, GridSpec, Stencil, Trajectory};
use crate::linear::{BoundaryData, CoefficientField, LinearSolver, LinearSolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearSolveConfig {
    pub max_picard: usize,
    /// Stop when `||v_{k+1} - v_k|| <= picard_tol * ||v_{k+1}||` in `L2(Q)`.
    pub picard_tol: f64,
    /// Emit per-iterate sixth-order surrogate norms.
    pub epsilon_report: bool,
    /// Keep the convective term. Disabling it reduces the iteration to one
    /// linear solve.
    pub include_convection: bool,
    /// Consecutive ratios `>= 1` that abort the iteration.
    pub divergence_window: usize,
    pub linear: LinearSolverConfig,
}

impl Default for NonlinearSolveConfig {
    fn default() -> Self {
        Self {
            max_picard: 50,
            picard_tol: 1e-10,
            epsilon_report: false,
            include_convection: true,
            divergence_window: 3,
            linear: LinearSolverConfig::default(),
        }
    }
}

impl NonlinearSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_picard < 1 {
            return Err(KsError::InvalidInput("max_picard must be >= 1".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(KsError::InvalidInput("picard_tol must be positive".into()));
        }
        if self.divergence_window < 1 {
            return Err(KsError::InvalidInput("divergence_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Smallness measurements of the data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSize {
    /// Discrete `H^6(0,1)` surrogate of the initial profile.
    pub y0_h6: f64,
    /// `L2(Q)` norm of the source.
    pub g_l2q: f64,
    /// Largest absolute boundary value over `h1..h4`.
    pub boundary_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PicardReport {
    /// Number of applications of the fixed-point map after the initial solve.
    pub iterations: usize,
    /// `||v_{k+1} - v_k||` in `L2(Q)`, one per iteration.
    pub update_norms: Vec<f64>,
    /// `update_norms[k] / update_norms[k-1]`.
    pub ratios: Vec<f64>,
    /// Componentwise relative residual of the full nonlinear scheme.
    pub final_residual: f64,
    pub converged: bool,
    /// Sixth-order surrogate of each update, when requested.
    pub update_h6: Vec<f64>,
    pub data_size: Option<DataSize>,
}

impl PicardReport {
    pub fn max_ratio(&self) -> Option<f64> {
        self.ratios.iter().copied().reduce(f64::max)
    }

    /// Geometric mean of the ratios.
    pub fn mean_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self.ratios.iter().copied().filter(|r| *r > 0.0).collect();
        if r.is_empty() {
            None
        } else {
            Some((r.iter().map(|v| v.ln()).sum::<f64>() / r.len() as f64).exp())
        }
    }
}

/// `v v_x` with the centered first-derivative stencil.
pub fn convective_term(v: &Trajectory) -> Result<Trajectory> {
    let grid = v.grid();
    let d1 = Stencil::new(1, grid.x_len(), grid.dx())?;
    v.map_rows(|_, row| {
        (0..row.len())
            .map(|i| row[i] * d1.apply_at(row, i))
            .collect()
    })
}

/// Sum of squared `L2` norms of `∂^j row` for `j <= 6`; orders 5 and 6 by
/// composing the order-4 stencil with orders 1 and 2.
fn h6_squared(row: &[f64], dx: f64) -> Result<f64> {
    let sq = |d: &[f64]| trapezoid(&d.iter().map(|a| a * a).collect::<Vec<_>>(), dx);
    let mut total = sq(row);
    let mut d4 = Vec::new();
    for k in 1..=4 {
        let d = Stencil::new(k, row.len(), dx)?.apply(row);
        total += sq(&d);
        if k == 4 {
            d4 = d;
        }
    }
    for k in 1..=2 {
        total += sq(&Stencil::new(k, row.len(), dx)?.apply(&d4));
    }
    Ok(total)
}

/// `max_t` of the discrete `H^6(0,1)` norm.
pub fn h6_surrogate(v: &Trajectory) -> Result<f64> {
    let dx = v.grid().dx();
    let mut best = 0.0_f64;
    for row in v.rows() {
        best = best.max(h6_squared(row, dx)?);
    }
    Ok(best.sqrt())
}

fn data_size(bd: &BoundaryData) -> Result<DataSize> {
    Ok(DataSize {
        y0_h6: h6_squared(bd.y0().values(), bd.grid().dx())?.sqrt(),
        g_l2q: l2q_squared(bd.g()).sqrt(),
        boundary_max: bd
            .series()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs())),
    })
}

/// Applies the fixed-point map: solves the full linear problem with source
/// `g - v v_x`.
pub fn picard_map(
    solver: &LinearSolver,
    coeff: &CoefficientField,
    bd: &BoundaryData,
    grid: &GridSpec,
    v: &Trajectory,
) -> Result<Trajectory> {
    grid.ensure_same(v.grid(), "iterate")?;
    let src = bd.g().axpy(-1.0, &convective_term(v)?)?;
    solver.solve_linear_full_unchecked(coeff, bd, &src, grid)
}

fn no_convergence(reason: String, report: PicardReport) -> KsError {
    KsError::NoConvergence {
        reason,
        report: Box::new(report),
    }
}

/// Solves the nonlinear clamped problem. Returns the last iterate and the
/// iteration history.
pub fn solve_ks(
    coeff: &CoefficientField,
    bd: &BoundaryData,
    cfg: &NonlinearSolveConfig,
    grid: &GridSpec,
) -> Result<(Trajectory, PicardReport)> {
    cfg.validate()?;
    grid.ensure_same(bd.grid(), "boundary data")?;
    let solver = LinearSolver::new(cfg.linear);
    let mut report = PicardReport::default();
    if cfg.epsilon_report {
        report.data_size = Some(data_size(bd)?);
    }
    let mut v = solver.solve_linear_full(coeff, bd, grid)?;
    loop {
        let next = if cfg.include_convection {
            match picard_map(&solver, coeff, bd, grid, &v) {
                Ok(t) => t,
                Err(KsError::NonFinite(what)) => {
                    return Err(no_convergence(format!("non-finite values in {what}"), report))
                }
                Err(e) => return Err(e),
            }
        } else {
            solver.solve_linear_full_unchecked(coeff, bd, bd.g(), grid)?
        };
        report.iterations += 1;
        if !next.is_finite() {
            return Err(no_convergence("non-finite iterate".into(), report));
        }
        let diff = next.sub(&v)?;
        let update = l2q_squared(&diff).sqrt();
        let size = l2q_squared(&next).sqrt();
        if !update.is_finite() || !size.is_finite() {
            return Err(no_convergence("non-finite update norm".into(), report));
        }
        if let Some(&prev) = report.update_norms.last() {
            report.ratios.push(if prev > 0.0 { update / prev } else { f64::INFINITY });
        }
        report.update_norms.push(update);
        if cfg.epsilon_report {
            report.update_h6.push(h6_surrogate(&diff)?);
        }
        v = next;
        if update <= cfg.picard_tol * size {
            report.converged = true;
            break;
        }
        let w = cfg.divergence_window;
        if report.ratios.len() >= w && report.ratios[report.ratios.len() - w..].iter().all(|r| *r >= 1.0) {
            return Err(no_convergence(
                format!("{w} consecutive contraction ratios >= 1"),
                report,
            ));
        }
        if report.iterations >= cfg.max_picard {
            return Err(no_convergence(
                format!("max_picard = {} reached", cfg.max_picard),
                report,
            ));
        }
    }
    report.final_residual = solver
        .scheme_residual(coeff, bd, bd.g(), &v, cfg.include_convection)?
        .max_relative;
    Ok((v, report))
}

/// `||Λ(v) - Λ(w)|| / ||v - w||` in `L2(Q)`.
pub fn contraction_probe(
    coeff: &CoefficientField,
    bd: &BoundaryData,
    grid: &GridSpec,
    v: &Trajectory,
    w: &Trajectory,
) -> Result<f64> {
    grid.ensure_same(w.grid(), "probe")?;
    let den = l2q_squared(&v.sub(w)?).sqrt();
    if den == 0.0 {
        return Err(KsError::ZeroDenominator);
    }
    let solver = LinearSolver::default();
    let (lv, lw) = rayon::join(
        || picard_map(&solver, coeff, bd, grid, v),
        || picard_map(&solver, coeff, bd, grid, w),
    );
    Ok(l2q_squared(&lv?.sub(&lw?)?).sqrt() / den)
}

/// One amplitude of a smallness sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// First amplitude at which the iteration failed.
    pub threshold: Option<f64>,
}

/// Runs the solver over increasing amplitudes until the first failure.
/// `problem(δ)` builds the coefficients and data at amplitude `δ`.
pub fn smallness_sweep(
    deltas: &[f64],
    cfg: &NonlinearSolveConfig,
    grid: &GridSpec,
    problem: impl Fn(f64) -> Result<(CoefficientField, BoundaryData)>,
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut threshold = None;
    for &delta in deltas {
        let (coeff, bd) = problem(delta)?;
        match solve_ks(&coeff, &bd, cfg, grid) {
            Ok((_, rep)) => rows.push(SweepRow {
                delta,
                converged: true,
                iterations: rep.iterations,
                max_ratio: rep.max_ratio(),
                mean_ratio: rep.mean_ratio(),
            }),
            Err(KsError::NoConvergence { report, .. }) => {
                rows.push(SweepRow {
                    delta,
                    converged: false,
                    iterations: report.iterations,
                    max_ratio: report.max_ratio(),
                    mean_ratio: report.mean_ratio(),
                });
                threshold = Some(delta);
                break;
            }
            Err(KsError::NonFinite(_)) | Err(KsError::ResidualExceeded { .. }) => {
                rows.push(SweepRow {
                    delta,
                    converged: false,
                    iterations: 0,
                    max_ratio: None,
                    mean_ratio: None,
                });
                threshold = Some(delta);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SweepReport { rows, threshold })
}
