//! Linear clamped fourth-order parabolic problems
//!
//! ```text
//! z_t + (σ z_xx)_xx + γ z_xx + G1 z_x + G2 z = f   in (0,T) x (0,1)
//! z(t,0) = h1, z(t,1) = h2, z_x(t,0) = h3, z_x(t,1) = h4, z(0,.) = z0
//! ```
//!
//! Time stepping is trapezoidal (Crank-Nicolson) in all linear terms. The
//! spatial operator is `D2(σ D2 z) + γ D2 z + G1 D1 z + G2 z` with centered
//! second-order stencils, applied at nodes `2..=nx-2`. Nodes `0` and `nx` carry
//! the Dirichlet values; nodes `1` and `nx-1` carry the Neumann constraints as
//! four-point one-sided first derivatives, exact on cubics so that the cubic
//! lifting satisfies them exactly. The resulting system is pentadiagonal.

use crate::banded::{componentwise_residual, BandedLu, BandedMatrix};
use crate::error::{KsError, Result};
use crate::grid::{
    diff_t_traj, diff_x, fd_weights, hk_x_squared, trapezoid, GridSpec, ScalarField1D, Stencil,
    Trajectory,
};

/// One-sided four-point first derivative at `x = 0` over nodes `0..4`, times `dx`.
pub const LEFT_NEUMANN: [f64; 4] = [-11.0 / 6.0, 3.0, -1.5, 1.0 / 3.0];
/// Mirror of [`LEFT_NEUMANN`] at `x = 1` over nodes `nx-3..=nx`, times `dx`.
pub const RIGHT_NEUMANN: [f64; 4] = [-1.0 / 3.0, 1.5, -3.0, 11.0 / 6.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolverConfig {
    /// Tolerance of the initial/boundary compatibility conditions.
    pub comp_tol: f64,
    /// Componentwise relative residual allowed for each implicit step.
    pub lin_tol: f64,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        Self {
            comp_tol: 1e-8,
            lin_tol: 1e-10,
        }
    }
}

/// Diffusion `σ`, anti-diffusion `γ` and optional time-dependent lower-order
/// coefficients `G1` (of `z_x`) and `G2` (of `z`).
#[derive(Debug, Clone)]
pub struct CoefficientField {
    sigma: ScalarField1D,
    gamma: ScalarField1D,
    sigma0: f64,
    g1: Option<Trajectory>,
    g2: Option<Trajectory>,
}

impl CoefficientField {
    pub fn new(sigma: ScalarField1D, gamma: ScalarField1D, sigma0: f64) -> Result<Self> {
        sigma.grid().ensure_same(gamma.grid(), "gamma")?;
        if !(sigma0 > 0.0) {
            return Err(KsError::InvalidInput(format!(
                "sigma0 = {sigma0} must be positive"
            )));
        }
        let min = sigma.min();
        if min < sigma0 {
            return Err(KsError::InvalidInput(format!(
                "min sigma = {min} is below the certified bound sigma0 = {sigma0}"
            )));
        }
        Ok(Self {
            sigma,
            gamma,
            sigma0,
            g1: None,
            g2: None,
        })
    }

    /// `σ` with its minimum as the certified bound.
    pub fn with_certified_min(sigma: ScalarField1D, gamma: ScalarField1D) -> Result<Self> {
        let s0 = sigma.min();
        Self::new(sigma, gamma, s0)
    }

    /// Constant `σ` and `γ`.
    pub fn constant(grid: GridSpec, sigma: f64, gamma: f64) -> Result<Self> {
        Self::new(
            ScalarField1D::constant(grid, sigma),
            ScalarField1D::constant(grid, gamma),
            sigma,
        )
    }

    pub fn with_lower_order(mut self, g1: Option<Trajectory>, g2: Option<Trajectory>) -> Result<Self> {
        for g in g1.iter().chain(g2.iter()) {
            self.sigma.grid().ensure_same(g.grid(), "lower-order coefficient")?;
        }
        self.g1 = g1;
        self.g2 = g2;
        Ok(self)
    }

    pub fn with_gamma(&self, gamma: ScalarField1D) -> Result<Self> {
        self.sigma.grid().ensure_same(gamma.grid(), "gamma")?;
        let mut c = self.clone();
        c.gamma = gamma;
        Ok(c)
    }

    pub fn sigma(&self) -> &ScalarField1D {
        &self.sigma
    }

    pub fn gamma(&self) -> &ScalarField1D {
        &self.gamma
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn g1(&self) -> Option<&Trajectory> {
        self.g1.as_ref()
    }

    pub fn g2(&self) -> Option<&Trajectory> {
        self.g2.as_ref()
    }

    pub fn grid(&self) -> &GridSpec {
        self.sigma.grid()
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.grid().nx() != grid.nx() {
            return Err(KsError::GridMismatch(format!(
                "coefficients sampled on nx = {}, problem has nx = {}",
                self.grid().nx(),
                grid.nx()
            )));
        }
        for g in self.g1.iter().chain(self.g2.iter()) {
            grid.ensure_same(g.grid(), "lower-order coefficient")?;
        }
        Ok(())
    }
}

/// Boundary series `h1..h4`, initial profile and source term.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    h: [Vec<f64>; 4],
    y0: ScalarField1D,
    g: Trajectory,
}

impl BoundaryData {
    pub fn new(h: [Vec<f64>; 4], y0: ScalarField1D, g: Trajectory) -> Result<Self> {
        let grid = *g.grid();
        if y0.grid().nx() != grid.nx() {
            return Err(KsError::GridMismatch("initial profile".into()));
        }
        for series in &h {
            if series.len() != grid.t_len() {
                return Err(KsError::LengthMismatch {
                    what: "boundary series",
                    expected: grid.t_len(),
                    got: series.len(),
                });
            }
            if series.iter().any(|v| !v.is_finite()) {
                return Err(KsError::NonFinite("boundary series"));
            }
        }
        Ok(Self { h, y0, g })
    }

    /// Homogeneous clamped data.
    pub fn homogeneous(y0: ScalarField1D, g: Trajectory) -> Result<Self> {
        let len = g.grid().t_len();
        Self::new(
            [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            y0,
            g,
        )
    }

    pub fn zero(grid: GridSpec) -> Self {
        let len = grid.t_len();
        Self {
            h: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            y0: ScalarField1D::zeros(grid),
            g: Trajectory::zeros(grid),
        }
    }

    /// Boundary series and initial data read off a closed-form solution
    /// `y(t, x)` with derivative `y_x(t, x)`; source supplied separately.
    pub fn from_exact(
        grid: GridSpec,
        y: impl Fn(f64, f64) -> f64,
        y_x: impl Fn(f64, f64) -> f64,
        g: Trajectory,
    ) -> Result<Self> {
        let ts = grid.ts();
        let h = [
            ts.iter().map(|&t| y(t, 0.0)).collect(),
            ts.iter().map(|&t| y(t, 1.0)).collect(),
            ts.iter().map(|&t| y_x(t, 0.0)).collect(),
            ts.iter().map(|&t| y_x(t, 1.0)).collect(),
        ];
        let y0 = ScalarField1D::from_fn(grid, |x| y(0.0, x))?;
        Self::new(h, y0, g)
    }

    pub fn h(&self, j: usize) -> &[f64] {
        &self.h[j]
    }

    pub fn series(&self) -> &[Vec<f64>; 4] {
        &self.h
    }

    pub fn y0(&self) -> &ScalarField1D {
        &self.y0
    }

    pub fn g(&self) -> &Trajectory {
        &self.g
    }

    pub fn grid(&self) -> &GridSpec {
        self.g.grid()
    }

    pub fn with_source(&self, g: Trajectory) -> Result<Self> {
        self.grid().ensure_same(g.grid(), "source")?;
        Ok(Self {
            h: self.h.clone(),
            y0: self.y0.clone(),
            g,
        })
    }

    pub fn with_initial(&self, y0: ScalarField1D) -> Result<Self> {
        Self::new(self.h.clone(), y0, self.g.clone())
    }

    /// Scales every piece of data by `a`.
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            h: self.h.clone().map(|s| s.into_iter().map(|v| a * v).collect()),
            y0: ScalarField1D::new(self.y0.values().iter().map(|v| a * v).collect(), *self.y0.grid())
                .expect("scaling keeps the length"),
            g: self.g.scaled(a),
        }
    }

    /// `|y0(0) - h1(0)|`, `|y0(1) - h2(0)|`, `|y0'(0) - h3(0)|`, `|y0'(1) - h4(0)|`.
    pub fn compatibility_gaps(&self) -> Result<[f64; 4]> {
        compatibility_gaps(&self.y0, [self.h[0][0], self.h[1][0], self.h[2][0], self.h[3][0]])
    }

    pub fn check_compatibility(&self, comp_tol: f64) -> Result<()> {
        check_compatibility(
            &self.y0,
            [self.h[0][0], self.h[1][0], self.h[2][0], self.h[3][0]],
            comp_tol,
        )
    }
}

fn compatibility_gaps(y0: &ScalarField1D, h: [f64; 4]) -> Result<[f64; 4]> {
    let d1 = diff_x(y0, 1)?;
    let v = y0.values();
    let n = v.len() - 1;
    Ok([
        (v[0] - h[0]).abs(),
        (v[n] - h[1]).abs(),
        (d1.values()[0] - h[2]).abs(),
        (d1.values()[n] - h[3]).abs(),
    ])
}

/// Checks the four compatibility conditions. Value conditions use `comp_tol`;
/// derivative conditions also allow twice the truncation error of `diff_x`,
/// estimated against a one-sided stencil with one more node.
fn check_compatibility(y0: &ScalarField1D, h: [f64; 4], comp_tol: f64) -> Result<()> {
    let gaps = compatibility_gaps(y0, h)?;
    let v = y0.values();
    let n = v.len() - 1;
    let dx = y0.grid().dx();
    let d1 = Stencil::new(1, v.len(), dx)?;
    let wide = d1.width() + 1;
    let nodes: Vec<f64> = (0..wide).map(|k| k as f64).collect();
    let weights = fd_weights(1, 0.0, &nodes);
    let left: f64 = weights.iter().zip(v).map(|(w, a)| w * a).sum::<f64>() / dx;
    let right: f64 = -weights.iter().zip(v.iter().rev()).map(|(w, a)| w * a).sum::<f64>() / dx;
    let allowance = [
        0.0,
        0.0,
        2.0 * (d1.apply_at(v, 0) - left).abs(),
        2.0 * (d1.apply_at(v, n) - right).abs(),
    ];
    const NAMES: [&str; 4] = ["y0(0) = h1(0)", "y0(1) = h2(0)", "y0'(0) = h3(0)", "y0'(1) = h4(0)"];
    for k in 0..4 {
        let tol = comp_tol + allowance[k];
        if !(gaps[k] <= tol) {
            return Err(KsError::CompatibilityViolation(format!(
                "{}: gap {:e} exceeds {:e}",
                NAMES[k], gaps[k], tol
            )));
        }
    }
    Ok(())
}

/// Cubic Hermite shape functions on `[0,1]` and their first derivatives.
pub fn shape_functions(x: f64) -> ([f64; 4], [f64; 4]) {
    let x2 = x * x;
    let x3 = x2 * x;
    (
        [
            2.0 * x3 - 3.0 * x2 + 1.0,
            -2.0 * x3 + 3.0 * x2,
            x3 - 2.0 * x2 + x,
            x3 - x2,
        ],
        [
            6.0 * x2 - 6.0 * x,
            -6.0 * x2 + 6.0 * x,
            3.0 * x2 - 4.0 * x + 1.0,
            3.0 * x2 - 2.0 * x,
        ],
    )
}

/// `ψ(t, x) = Σ p_j(x) h_j(t)`, carrying the boundary data.
#[derive(Debug, Clone)]
pub struct LiftingField {
    pub psi: Trajectory,
}

pub fn build_lifting(bd: &BoundaryData, grid: &GridSpec) -> Result<LiftingField> {
    for s in bd.series() {
        if s.len() != grid.t_len() {
            return Err(KsError::LengthMismatch {
                what: "boundary series",
                expected: grid.t_len(),
                got: s.len(),
            });
        }
    }
    let shapes: Vec<[f64; 4]> = grid.xs().iter().map(|&x| shape_functions(x).0).collect();
    let rows = (0..grid.t_len())
        .map(|n| {
            let h = [bd.h(0)[n], bd.h(1)[n], bd.h(2)[n], bd.h(3)[n]];
            shapes
                .iter()
                .map(|p| p.iter().zip(&h).map(|(p, h)| p * h).sum())
                .collect()
        })
        .collect();
    Ok(LiftingField {
        psi: Trajectory::from_rows(rows, *grid)?,
    })
}

/// Discrete boundary values of a profile: `z(0)`, `z(1)` and the four-point
/// one-sided derivatives at both ends (the quantities the scheme constrains).
pub fn clamped_boundary_values(row: &[f64], dx: f64) -> [f64; 4] {
    let n = row.len() - 1;
    let left: f64 = LEFT_NEUMANN.iter().zip(&row[..4]).map(|(w, v)| w * v).sum();
    let right: f64 = RIGHT_NEUMANN.iter().zip(&row[n - 3..]).map(|(w, v)| w * v).sum();
    [row[0], row[n], left / dx, right / dx]
}

/// Discretized spatial operator at one time level.
pub(crate) struct SpatialOperator<'a> {
    sigma: &'a [f64],
    gamma: Option<&'a [f64]>,
    g1: Option<&'a Trajectory>,
    g2: Option<&'a Trajectory>,
    dx: f64,
    len: usize,
}

impl<'a> SpatialOperator<'a> {
    pub(crate) fn principal(coeff: &'a CoefficientField) -> Self {
        Self {
            sigma: coeff.sigma.values(),
            gamma: None,
            g1: None,
            g2: None,
            dx: coeff.grid().dx(),
            len: coeff.grid().x_len(),
        }
    }

    pub(crate) fn full(coeff: &'a CoefficientField) -> Self {
        Self {
            sigma: coeff.sigma.values(),
            gamma: Some(coeff.gamma.values()),
            g1: coeff.g1.as_ref(),
            g2: coeff.g2.as_ref(),
            dx: coeff.grid().dx(),
            len: coeff.grid().x_len(),
        }
    }

    fn time_dependent(&self) -> bool {
        self.g1.is_some() || self.g2.is_some()
    }

    /// Weights on columns `i-2..=i+2` for interior node `i` at time level `n`.
    fn row(&self, i: usize, n: usize) -> [f64; 5] {
        let s = self.sigma;
        let h2 = self.dx * self.dx;
        let h4 = h2 * h2;
        let (sm, s0, sp) = (s[i - 1], s[i], s[i + 1]);
        let mut w = [
            sm / h4,
            (-2.0 * sm - 2.0 * s0) / h4,
            (sm + 4.0 * s0 + sp) / h4,
            (-2.0 * s0 - 2.0 * sp) / h4,
            sp / h4,
        ];
        if let Some(g) = self.gamma {
            let c = g[i] / h2;
            w[1] += c;
            w[2] -= 2.0 * c;
            w[3] += c;
        }
        if let Some(g1) = self.g1 {
            let c = g1.at(n, i) / (2.0 * self.dx);
            w[1] -= c;
            w[3] += c;
        }
        if let Some(g2) = self.g2 {
            w[2] += g2.at(n, i);
        }
        w
    }

    fn interior(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.len - 3
    }

    /// `A z` at interior nodes, zero on the four constrained nodes.
    pub(crate) fn apply(&self, z: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for i in self.interior() {
            let w = self.row(i, n);
            out[i] = (0..5).map(|k| w[k] * z[i + k - 2]).sum();
        }
        out
    }

    pub(crate) fn apply_abs(&self, z: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for i in self.interior() {
            let w = self.row(i, n);
            out[i] = (0..5).map(|k| (w[k] * z[i + k - 2]).abs()).sum();
        }
        out
    }

    /// `I + c A` on interior rows, clamped constraint rows elsewhere.
    fn step_matrix(&self, c: f64, n: usize) -> BandedMatrix {
        let len = self.len;
        let mut m = BandedMatrix::zeros(len, 2, 2);
        m.set(0, 0, 1.0);
        m.set(len - 1, len - 1, 1.0);
        for (k, w) in LEFT_NEUMANN.iter().enumerate() {
            m.set(1, k, *w);
        }
        for (k, w) in RIGHT_NEUMANN.iter().enumerate() {
            m.set(len - 2, len - 4 + k, *w);
        }
        for i in self.interior() {
            let w = self.row(i, n);
            for k in 0..5 {
                m.set(i, i + k - 2, c * w[k]);
            }
            m.add(i, i, 1.0);
        }
        m
    }
}

/// Interior forcing for the step `n -> n+1`, averaged over the two levels.
pub(crate) type StepForcing<'f> = dyn Fn(usize) -> Vec<f64> + 'f;

/// Crank-Nicolson march. `forcing(n)` is the half-step forcing for `n -> n+1`
/// (only interior entries are read); `boundary(n)` gives `[h1,h2,h3,h4]` at `t_n`.
/// With `project`, the initial row is made to satisfy the four discrete
/// constraints by resetting nodes `0`, `1`, `nx-1` and `nx`.
pub(crate) fn march(
    op: &SpatialOperator<'_>,
    z0: &[f64],
    project: bool,
    forcing: &StepForcing<'_>,
    boundary: &dyn Fn(usize) -> [f64; 4],
    grid: &GridSpec,
    cfg: &LinearSolverConfig,
) -> Result<Trajectory> {
    let len = grid.x_len();
    let dt = grid.dt();
    let dx = grid.dx();
    if z0.len() != len {
        return Err(KsError::LengthMismatch {
            what: "initial profile",
            expected: len,
            got: z0.len(),
        });
    }
    let mut out = Trajectory::zeros(*grid);
    out.row_mut(0).copy_from_slice(z0);
    if project {
        project_clamped(out.row_mut(0), boundary(0), dx);
    }

    let factor = |n: usize| -> Result<(BandedMatrix, BandedLu)> {
        let m = op.step_matrix(0.5 * dt, n);
        let lu = m
            .clone()
            .factor()
            .map_err(|e| KsError::SingularSystem { step: n, row: e.row })?;
        Ok((m, lu))
    };
    let cached = if op.time_dependent() {
        None
    } else {
        Some(factor(1)?)
    };

    let mut rhs = vec![0.0; len];
    for n in 0..grid.nt() {
        let zn = out.row(n).to_vec();
        let az = op.apply(&zn, n);
        let f = forcing(n);
        for i in op.interior() {
            rhs[i] = zn[i] - 0.5 * dt * az[i] + dt * f[i];
        }
        let b = boundary(n + 1);
        rhs[0] = b[0];
        rhs[len - 1] = b[1];
        rhs[1] = dx * b[2];
        rhs[len - 2] = dx * b[3];

        let fresh;
        let (m, lu) = match &cached {
            Some(pair) => (&pair.0, &pair.1),
            None => {
                fresh = factor(n + 1)?;
                (&fresh.0, &fresh.1)
            }
        };
        let z = lu.solve(&rhs);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(KsError::NonFinite("implicit step"));
        }
        let res = componentwise_residual(m, &z, &rhs);
        if !(res <= cfg.lin_tol) {
            return Err(KsError::ResidualExceeded {
                step: n + 1,
                residual: res,
                tol: cfg.lin_tol,
            });
        }
        out.row_mut(n + 1).copy_from_slice(&z);
    }
    Ok(out)
}

/// Resets the end nodes and their neighbours so that `row` meets the discrete
/// clamped constraints `b = [h1, h2, h3, h4]` exactly.
pub fn project_clamped(row: &mut [f64], b: [f64; 4], dx: f64) {
    let n = row.len() - 1;
    row[0] = b[0];
    row[n] = b[1];
    let l = LEFT_NEUMANN;
    row[1] = (dx * b[2] - l[0] * row[0] - l[2] * row[2] - l[3] * row[3]) / l[1];
    let r = RIGHT_NEUMANN;
    row[n - 1] = (dx * b[3] - r[0] * row[n - 3] - r[1] * row[n - 2] - r[3] * row[n]) / r[2];
}

fn half_step_average(f: &Trajectory) -> impl Fn(usize) -> Vec<f64> + '_ {
    move |n| {
        f.row(n)
            .iter()
            .zip(f.row(n + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }
}

/// Residual of the discrete scheme evaluated on a given trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeResidual {
    /// Componentwise relative residual over interior nodes and steps.
    pub max_relative: f64,
    /// Largest absolute interior residual.
    pub max_abs: f64,
    /// Largest mismatch of the four constrained boundary quantities.
    pub boundary: f64,
}

/// Linear solver for the clamped problems, parameterized by tolerances.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearSolver {
    pub cfg: LinearSolverConfig,
}

impl LinearSolver {
    pub fn new(cfg: LinearSolverConfig) -> Self {
        Self { cfg }
    }

    /// `z_t + (σ z_xx)_xx = f` with homogeneous clamped conditions.
    pub fn solve_principal(
        &self,
        coeff: &CoefficientField,
        f: &Trajectory,
        z0: &ScalarField1D,
        grid: &GridSpec,
    ) -> Result<Trajectory> {
        coeff.check_grid(grid)?;
        grid.ensure_same(f.grid(), "source")?;
        check_compatibility(z0, [0.0; 4], self.cfg.comp_tol)?;
        let op = SpatialOperator::principal(coeff);
        march(
            &op,
            z0.values(),
            true,
            &half_step_average(f),
            &|_| [0.0; 4],
            grid,
            &self.cfg,
        )
    }

    /// Full linear problem with nonhomogeneous clamped data, solved as
    /// `z = w + ψ` with `w` carrying homogeneous data and source `f̂ - Lψ`.
    pub fn solve_linear_full(
        &self,
        coeff: &CoefficientField,
        bd: &BoundaryData,
        grid: &GridSpec,
    ) -> Result<Trajectory> {
        bd.check_compatibility(self.cfg.comp_tol)?;
        self.solve_linear_full_unchecked(coeff, bd, bd.g(), grid)
    }

    /// As [`Self::solve_linear_full`] with an explicit source and no
    /// compatibility check on the initial profile.
    pub(crate) fn solve_linear_full_unchecked(
        &self,
        coeff: &CoefficientField,
        bd: &BoundaryData,
        source: &Trajectory,
        grid: &GridSpec,
    ) -> Result<Trajectory> {
        coeff.check_grid(grid)?;
        grid.ensure_same(source.grid(), "source")?;
        let lifting = build_lifting(bd, grid)?;
        let psi = &lifting.psi;
        let op = SpatialOperator::full(coeff);
        let dt = grid.dt();
        let forcing = |n: usize| -> Vec<f64> {
            let a0 = op.apply(psi.row(n), n);
            let a1 = op.apply(psi.row(n + 1), n + 1);
            (0..grid.x_len())
                .map(|i| {
                    let lpsi = (psi.at(n + 1, i) - psi.at(n, i)) / dt + 0.5 * (a0[i] + a1[i]);
                    0.5 * (source.at(n, i) + source.at(n + 1, i)) - lpsi
                })
                .collect()
        };
        let w0: Vec<f64> = bd
            .y0()
            .values()
            .iter()
            .zip(psi.row(0))
            .map(|(y, p)| y - p)
            .collect();
        let w = march(&op, &w0, true, &forcing, &|_| [0.0; 4], grid, &self.cfg)?;
        w.axpy(1.0, psi)
    }

    /// Time-derived system: `q = z_t` solves the principal problem with source
    /// `f_t` and initial value `f(0) - (σ z0'')''`.
    pub fn solve_time_derived(
        &self,
        coeff: &CoefficientField,
        f: &Trajectory,
        z0: &ScalarField1D,
        grid: &GridSpec,
    ) -> Result<Trajectory> {
        coeff.check_grid(grid)?;
        grid.ensure_same(f.grid(), "source")?;
        check_compatibility(z0, [0.0; 4], self.cfg.comp_tol)?;
        let op = SpatialOperator::principal(coeff);
        let az = op.apply(z0.values(), 0);
        // product rule on the four constrained nodes, where `op` is not defined
        let sigma = coeff.sigma();
        let (s1, s2) = (diff_x(sigma, 1)?, diff_x(sigma, 2)?);
        let (z2, z3, z4) = (diff_x(z0, 2)?, diff_x(z0, 3)?, diff_x(z0, 4)?);
        let len = grid.x_len();
        let q0: Vec<f64> = (0..len)
            .map(|i| {
                let flux_xx = if (2..len - 2).contains(&i) {
                    az[i]
                } else {
                    s2.values()[i] * z2.values()[i]
                        + 2.0 * s1.values()[i] * z3.values()[i]
                        + sigma.values()[i] * z4.values()[i]
                };
                f.at(0, i) - flux_xx
            })
            .collect();
        let ft = diff_t_traj(f)?;
        let forcing = half_step_average(&ft);
        let q = march(&op, &q0, false, &forcing, &|_| [0.0; 4], grid, &self.cfg)?;
        Ok(q)
    }

    /// Residual of the full linear scheme (optionally with the convective term
    /// `z z_x`) evaluated on `z`.
    pub fn scheme_residual(
        &self,
        coeff: &CoefficientField,
        bd: &BoundaryData,
        source: &Trajectory,
        z: &Trajectory,
        convective: bool,
    ) -> Result<SchemeResidual> {
        let grid = *z.grid();
        coeff.check_grid(&grid)?;
        grid.ensure_same(source.grid(), "source")?;
        let op = SpatialOperator::full(coeff);
        let d1 = Stencil::new(1, grid.x_len(), grid.dx())?;
        let dt = grid.dt();
        let conv = |n: usize| -> (Vec<f64>, Vec<f64>) {
            let row = z.row(n);
            let v: Vec<f64> = (0..grid.x_len())
                .map(|i| row[i] * d1.apply_at(row, i))
                .collect();
            let a = v.iter().map(|x| x.abs()).collect();
            (v, a)
        };
        let mut max_rel = 0.0_f64;
        let mut max_abs = 0.0_f64;
        let mut boundary = 0.0_f64;
        for n in 0..grid.nt() {
            let (z0, z1) = (z.row(n), z.row(n + 1));
            let (a0, a1) = (op.apply(z0, n), op.apply(z1, n + 1));
            let (s0, s1) = (op.apply_abs(z0, n), op.apply_abs(z1, n + 1));
            let (c0, c1, ca0, ca1) = if convective {
                let (c0, ca0) = conv(n);
                let (c1, ca1) = conv(n + 1);
                (c0, c1, ca0, ca1)
            } else {
                let zero = vec![0.0; grid.x_len()];
                (zero.clone(), zero.clone(), zero.clone(), zero)
            };
            for i in 2..=grid.nx() - 2 {
                let f = 0.5 * (source.at(n, i) + source.at(n + 1, i));
                let r = (z1[i] - z0[i]) / dt + 0.5 * (a0[i] + a1[i]) + 0.5 * (c0[i] + c1[i]) - f;
                let scale = (z1[i].abs() + z0[i].abs()) / dt
                    + 0.5 * (s0[i] + s1[i] + ca0[i] + ca1[i])
                    + f.abs();
                max_abs = max_abs.max(r.abs());
                if scale > 0.0 {
                    max_rel = max_rel.max(r.abs() / scale);
                }
            }
            let b = clamped_boundary_values(z1, grid.dx());
            for k in 0..4 {
                boundary = boundary.max((b[k] - bd.h(k)[n + 1]).abs());
            }
        }
        Ok(SchemeResidual {
            max_relative: max_rel,
            max_abs,
            boundary,
        })
    }
}

/// Cap on the empirical energy constants above which a violation is flagged.
pub const DEFAULT_ENERGY_CAP: f64 = 1e6;

/// Discrete counterparts of the energy estimates for the principal problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// `∫|z(t_n)|^2` per time node.
    pub l2_squared: Vec<f64>,
    /// `∫σ|z_xx(t_n)|^2` per time node.
    pub sigma_zxx_squared: Vec<f64>,
    /// `∬|z_xx|^2`.
    pub zxx_squared_total: f64,
    /// `∬|f|^2`.
    pub f_squared_total: f64,
    /// `∫|z0|^2`.
    pub z0_squared: f64,
    /// `∫|z0''|^2`.
    pub z0_xx_squared: f64,
    /// `max_t ∫|z|^2 / (∬|f|^2 + ∫|z0|^2)`.
    pub c_energy1: f64,
    /// `∬|z_xx|^2 / (∬|f|^2 + ∫|z0|^2)`.
    pub c_energy2: f64,
    /// `(max_t ||z||_{H2}^2 + ∫||z||_{H4}^2) / (∬|f|^2 + ∫|z0''|^2)`.
    pub c_y2: f64,
    pub violation: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn energy_monitor(
    z: &Trajectory,
    f: &Trajectory,
    coeff: &CoefficientField,
    cap: f64,
) -> Result<EnergyReport> {
    let grid = *z.grid();
    grid.ensure_same(f.grid(), "source")?;
    coeff.check_grid(&grid)?;
    let dx = grid.dx();
    let d2 = Stencil::new(2, grid.x_len(), dx)?;
    let sigma = coeff.sigma().values();
    let mut l2 = Vec::with_capacity(grid.t_len());
    let mut szz = Vec::with_capacity(grid.t_len());
    let mut zxx_t = Vec::with_capacity(grid.t_len());
    let mut f_t = Vec::with_capacity(grid.t_len());
    let mut h2_max = 0.0_f64;
    let mut h4_t = Vec::with_capacity(grid.t_len());
    for n in 0..grid.t_len() {
        let row = z.row(n);
        let zxx = d2.apply(row);
        l2.push(trapezoid(&row.iter().map(|v| v * v).collect::<Vec<_>>(), dx));
        szz.push(trapezoid(
            &zxx.iter().zip(sigma).map(|(v, s)| s * v * v).collect::<Vec<_>>(),
            dx,
        ));
        zxx_t.push(trapezoid(&zxx.iter().map(|v| v * v).collect::<Vec<_>>(), dx));
        f_t.push(trapezoid(&f.row(n).iter().map(|v| v * v).collect::<Vec<_>>(), dx));
        h2_max = h2_max.max(hk_x_squared(row, &grid, 2)?);
        h4_t.push(hk_x_squared(row, &grid, 4)?);
    }
    let dt = grid.dt();
    let zxx_total = trapezoid(&zxx_t, dt);
    let f_total = trapezoid(&f_t, dt);
    let z0_sq = l2[0];
    let z0_xx_sq = zxx_t[0];
    let max_l2 = l2.iter().copied().fold(0.0, f64::max);
    let c1 = ratio(max_l2, f_total + z0_sq);
    let c2 = ratio(zxx_total, f_total + z0_sq);
    let c3 = ratio(h2_max + trapezoid(&h4_t, dt), f_total + z0_xx_sq);
    Ok(EnergyReport {
        l2_squared: l2,
        sigma_zxx_squared: szz,
        zxx_squared_total: zxx_total,
        f_squared_total: f_total,
        z0_squared: z0_sq,
        z0_xx_squared: z0_xx_sq,
        c_energy1: c1,
        c_energy2: c2,
        c_y2: c3,
        violation: c1 > cap || c2 > cap || c3 > cap,
    })
}
