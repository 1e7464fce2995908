//! Uniform space-time grid on `[0, T] x [0, 1]`, finite-difference stencils,
//! trapezoid-rule Sobolev norms and boundary traces.
//!
//! Derivative stencils are centered and second-order accurate where they fit.
//! Near the ends they are one-sided over `order + 4` nodes (fourth-order
//! accurate) so that the interior error dominates.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};

/// Uniform grid with `nx + 1` spatial nodes on `[0, 1]` and `nt + 1` time
/// nodes on `[0, t_final]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
    nt: usize,
    t_final: f64,
}

impl GridSpec {
    pub const MIN_NODES: usize = 8;

    pub fn new(nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        if nx < Self::MIN_NODES || nt < Self::MIN_NODES {
            return Err(KsError::InvalidGrid(format!(
                "nx = {nx}, nt = {nt}; both must be >= {}",
                Self::MIN_NODES
            )));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(KsError::InvalidGrid(format!("T = {t_final} must be positive")));
        }
        Ok(Self { nx, nt, t_final })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    /// Number of spatial nodes, `nx + 1`.
    pub fn x_len(&self) -> usize {
        self.nx + 1
    }

    /// Number of time nodes, `nt + 1`.
    pub fn t_len(&self) -> usize {
        self.nt + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        // exact endpoint
        if i == self.nx {
            1.0
        } else {
            i as f64 / self.nx as f64
        }
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.nt {
            self.t_final
        } else {
            self.t_final * n as f64 / self.nt as f64
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.x_len()).map(|i| self.x(i)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.t_len()).map(|n| self.t(n)).collect()
    }

    /// Index of the time node nearest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let n = (t / self.dt()).round();
        n.clamp(0.0, self.nt as f64) as usize
    }

    /// Same grid with a different final time (same node counts).
    pub fn with_t_final(&self, t_final: f64) -> Result<Self> {
        Self::new(self.nx, self.nt, t_final)
    }

    /// Same grid with both counts doubled.
    pub fn refined(&self) -> Self {
        Self {
            nx: 2 * self.nx,
            nt: 2 * self.nt,
            t_final: self.t_final,
        }
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(KsError::GridMismatch(format!(
                "{what}: {other:?} differs from {self:?}"
            )));
        }
        Ok(())
    }
}

/// Samples of a function of `x` on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField1D {
    values: Vec<f64>,
    grid: GridSpec,
}

impl ScalarField1D {
    pub fn new(values: Vec<f64>, grid: GridSpec) -> Result<Self> {
        if values.len() != grid.x_len() {
            return Err(KsError::LengthMismatch {
                what: "spatial field",
                expected: grid.x_len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KsError::NonFinite("spatial field"));
        }
        Ok(Self { values, grid })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.xs().into_iter().map(f).collect(), grid)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            values: vec![c; grid.x_len()],
            grid,
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }
}

/// Space-time samples, row `n` holding the profile at `t_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<f64>,
    grid: GridSpec,
}

impl Trajectory {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            values: vec![0.0; grid.x_len() * grid.t_len()],
            grid,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, grid: GridSpec) -> Result<Self> {
        if rows.len() != grid.t_len() {
            return Err(KsError::LengthMismatch {
                what: "trajectory rows",
                expected: grid.t_len(),
                got: rows.len(),
            });
        }
        let mut values = Vec::with_capacity(grid.x_len() * grid.t_len());
        for row in rows {
            if row.len() != grid.x_len() {
                return Err(KsError::LengthMismatch {
                    what: "trajectory row",
                    expected: grid.x_len(),
                    got: row.len(),
                });
            }
            values.extend(row);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KsError::NonFinite("trajectory"));
        }
        Ok(Self { values, grid })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = grid.xs();
        let rows = grid
            .ts()
            .into_iter()
            .map(|t| xs.iter().map(|&x| f(t, x)).collect())
            .collect();
        Self::from_rows(rows, grid)
    }

    /// Time-constant trajectory repeating `field`.
    pub fn broadcast(field: &ScalarField1D) -> Self {
        let grid = *field.grid();
        let mut values = Vec::with_capacity(grid.x_len() * grid.t_len());
        for _ in 0..grid.t_len() {
            values.extend_from_slice(field.values());
        }
        Self { values, grid }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.grid.x_len();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.grid.x_len();
        &mut self.values[n * w..(n + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.grid.x_len())
    }

    pub fn at(&self, n: usize, i: usize) -> f64 {
        self.values[n * self.grid.x_len() + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.grid.t_len()).map(|n| self.at(n, i)).collect()
    }

    pub fn profile(&self, n: usize) -> ScalarField1D {
        ScalarField1D {
            values: self.row(n).to_vec(),
            grid: self.grid,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.values)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &Trajectory) -> Result<Trajectory> {
        self.grid.ensure_same(&other.grid, "axpy")?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(u, v)| u + a * v)
            .collect();
        Ok(Trajectory {
            values,
            grid: self.grid,
        })
    }

    pub fn sub(&self, other: &Trajectory) -> Result<Trajectory> {
        self.axpy(-1.0, other)
    }

    pub fn scaled(&self, a: f64) -> Trajectory {
        Trajectory {
            values: self.values.iter().map(|v| a * v).collect(),
            grid: self.grid,
        }
    }

    /// Applies `f` row by row, producing a new trajectory on the same grid.
    pub fn map_rows(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<Trajectory> {
        let rows = self.rows().enumerate().map(|(n, r)| f(n, r)).collect();
        Trajectory::from_rows(rows, self.grid)
    }
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Finite-difference weights for the `order`-th derivative at `x0` using
/// nodes `xs` (Fornberg's recursion).
pub fn fd_weights(order: usize, x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n > order, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] *= c4 / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Second-order stencil set for one derivative order on `len` uniform nodes
/// with spacing `h`.
#[derive(Debug, Clone)]
pub struct Stencil {
    order: usize,
    half: usize,
    centered: Vec<f64>,
    /// `left[i]` is the one-sided stencil for node `i < half`, over the first `width()` nodes.
    left: Vec<Vec<f64>>,
    /// `right[k]` is for node `len - 1 - k`, over the last `width()` nodes.
    right: Vec<Vec<f64>>,
    len: usize,
}

impl Stencil {
    pub fn new(order: usize, len: usize, h: f64) -> Result<Self> {
        if !(1..=4).contains(&order) {
            return Err(KsError::InvalidInput(format!(
                "derivative order {order} outside 1..=4"
            )));
        }
        if len < 2 * order + 1 {
            return Err(KsError::GridTooCoarse {
                nx: len.saturating_sub(1),
                required: 2 * order,
            });
        }
        let half = order.div_ceil(2);
        let scale = h.powi(order as i32);
        let offsets: Vec<f64> = (-(half as i64)..=half as i64).map(|k| k as f64).collect();
        let centered = fd_weights(order, 0.0, &offsets)
            .into_iter()
            .map(|w| w / scale)
            .collect();
        let width = (order + 4).min(len);
        let nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
        // weights sum to zero exactly so constants differentiate to zero
        let one_sided = |i: usize| {
            let mut w = fd_weights(order, i as f64, &nodes);
            w[i] = -w.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).sum::<f64>();
            w
        };
        let left = (0..half)
            .map(|i| one_sided(i).into_iter().map(|w| w / scale).collect())
            .collect();
        // mirror of the left stencil: odd derivatives flip sign
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        let right = (0..half)
            .map(|k| {
                one_sided(k)
                    .into_iter()
                    .rev()
                    .map(|w| sign * w / scale)
                    .collect()
            })
            .collect();
        Ok(Self {
            order,
            half,
            centered,
            left,
            right,
            len,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of nodes in the one-sided boundary stencils.
    pub fn width(&self) -> usize {
        (self.order + 4).min(self.len)
    }

    /// Derivative at node `i`.
    pub fn apply_at(&self, v: &[f64], i: usize) -> f64 {
        debug_assert_eq!(v.len(), self.len);
        let width = self.width();
        if i < self.half {
            dot(&self.left[i], &v[..width])
        } else if i + self.half >= self.len {
            let k = self.len - 1 - i;
            dot(&self.right[k], &v[self.len - width..])
        } else {
            dot(&self.centered, &v[i - self.half..=i + self.half])
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.len).map(|i| self.apply_at(v, i)).collect()
    }

    /// Centered weights, lowest offset first.
    pub fn centered(&self) -> &[f64] {
        &self.centered
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `order`-th derivative of samples with uniform spacing `h`.
pub fn diff_uniform(values: &[f64], h: f64, order: usize) -> Result<Vec<f64>> {
    Ok(Stencil::new(order, values.len(), h)?.apply(values))
}

/// Spatial derivative of a field, `order` in `1..=4`.
pub fn diff_x(field: &ScalarField1D, order: usize) -> Result<ScalarField1D> {
    let grid = *field.grid();
    let values = diff_uniform(field.values(), grid.dx(), order)?;
    ScalarField1D::new(values, grid)
}

/// Spatial derivative applied to every row of a trajectory.
pub fn diff_x_traj(traj: &Trajectory, order: usize) -> Result<Trajectory> {
    let grid = *traj.grid();
    let st = Stencil::new(order, grid.x_len(), grid.dx())?;
    traj.map_rows(|_, r| st.apply(r))
}

/// Time derivative of a time series on the grid's time nodes.
pub fn diff_t_series(series: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    if series.len() != grid.t_len() {
        return Err(KsError::LengthMismatch {
            what: "time series",
            expected: grid.t_len(),
            got: series.len(),
        });
    }
    diff_uniform(series, grid.dt(), 1)
}

/// First time derivative of a trajectory (second order, one-sided at the ends).
pub fn diff_t_traj(traj: &Trajectory) -> Result<Trajectory> {
    let grid = *traj.grid();
    let st = Stencil::new(1, grid.t_len(), grid.dt())?;
    let mut out = Trajectory::zeros(grid);
    let mut col = vec![0.0; grid.t_len()];
    for i in 0..grid.x_len() {
        for (n, c) in col.iter_mut().enumerate() {
            *c = traj.at(n, i);
        }
        for n in 0..grid.t_len() {
            out.row_mut(n)[i] = st.apply_at(&col, n);
        }
    }
    Ok(out)
}

/// Composite trapezoid rule with uniform spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Trapezoid weights for `len` nodes with spacing `h`.
pub fn trapezoid_weights(len: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; len];
    if len > 0 {
        w[0] *= 0.5;
        w[len - 1] *= 0.5;
    }
    w
}

/// Trapezoid weights with third-order Gregory end corrections: exact for
/// cubics, `O(h^4)` for smooth integrands. Falls back to the plain rule below
/// six nodes.
pub fn gregory_weights(len: usize, h: f64) -> Vec<f64> {
    if len < 6 {
        return trapezoid_weights(len, h);
    }
    let mut w = vec![h; len];
    for (k, c) in [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0].into_iter().enumerate() {
        w[k] = c * h;
        w[len - 1 - k] = c * h;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    L2x,
    H1x,
    H2x,
    H4x,
    L2t,
    H1t,
    L2Q,
}

/// Input to [`discrete_norm`].
#[derive(Debug, Clone, Copy)]
pub enum Sampled<'a> {
    Field(&'a ScalarField1D),
    Series(&'a [f64], &'a GridSpec),
    Trajectory(&'a Trajectory),
}

/// Squared `H^k(0,1)` norm: trapezoid of `sum_{j<=k} |d^j v|^2`.
pub fn hk_x_squared(values: &[f64], grid: &GridSpec, k: usize) -> Result<f64> {
    if values.len() != grid.x_len() {
        return Err(KsError::LengthMismatch {
            what: "spatial field",
            expected: grid.x_len(),
            got: values.len(),
        });
    }
    let h = grid.dx();
    let mut total = trapezoid(&squares(values), h);
    for j in 1..=k {
        let d = diff_uniform(values, h, j)?;
        total += trapezoid(&squares(&d), h);
    }
    Ok(total)
}

/// Squared `H^k(0,T)` norm of a time series, `k` in `{0, 1}`.
pub fn hk_t_squared(series: &[f64], grid: &GridSpec, k: usize) -> Result<f64> {
    if series.len() != grid.t_len() {
        return Err(KsError::LengthMismatch {
            what: "time series",
            expected: grid.t_len(),
            got: series.len(),
        });
    }
    let h = grid.dt();
    let mut total = trapezoid(&squares(series), h);
    if k >= 1 {
        let d = diff_uniform(series, h, 1)?;
        total += trapezoid(&squares(&d), h);
    }
    Ok(total)
}

/// Squared `L^2(Q)` norm.
pub fn l2q_squared(traj: &Trajectory) -> f64 {
    let grid = traj.grid();
    let per_t: Vec<f64> = traj
        .rows()
        .map(|r| trapezoid(&squares(r), grid.dx()))
        .collect();
    trapezoid(&per_t, grid.dt())
}

/// Trapezoid integral over `Q` of a trajectory's values.
pub fn integrate_q(traj: &Trajectory) -> f64 {
    let grid = traj.grid();
    let per_t: Vec<f64> = traj.rows().map(|r| trapezoid(r, grid.dx())).collect();
    trapezoid(&per_t, grid.dt())
}

fn squares(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x * x).collect()
}

/// Discrete Sobolev norm of a field, series or trajectory.
pub fn discrete_norm(input: Sampled<'_>, kind: NormKind) -> Result<f64> {
    let sq = match (input, kind) {
        (Sampled::Field(f), NormKind::L2x) => hk_x_squared(f.values(), f.grid(), 0)?,
        (Sampled::Field(f), NormKind::H1x) => hk_x_squared(f.values(), f.grid(), 1)?,
        (Sampled::Field(f), NormKind::H2x) => hk_x_squared(f.values(), f.grid(), 2)?,
        (Sampled::Field(f), NormKind::H4x) => hk_x_squared(f.values(), f.grid(), 4)?,
        (Sampled::Series(s, g), NormKind::L2t) => hk_t_squared(s, g, 0)?,
        (Sampled::Series(s, g), NormKind::H1t) => hk_t_squared(s, g, 1)?,
        (Sampled::Trajectory(t), NormKind::L2Q) => l2q_squared(t),
        (_, kind) => {
            return Err(KsError::InvalidInput(format!(
                "norm {kind:?} does not apply to this input"
            )))
        }
    };
    Ok(sq.max(0.0).sqrt())
}

/// Squared `H^1(0,T; H^4(0,1))` norm.
pub fn h1t_h4x_squared(traj: &Trajectory) -> Result<f64> {
    let grid = *traj.grid();
    let yt = diff_t_traj(traj)?;
    let mut per_t = Vec::with_capacity(grid.t_len());
    for n in 0..grid.t_len() {
        per_t.push(hk_x_squared(traj.row(n), &grid, 4)? + hk_x_squared(yt.row(n), &grid, 4)?);
    }
    Ok(trapezoid(&per_t, grid.dt()))
}

/// `sup_t ||y(t)||_{H^1(0,1)}`.
pub fn linf_t_h1x(traj: &Trajectory) -> Result<f64> {
    let grid = *traj.grid();
    let mut m = 0.0_f64;
    for n in 0..grid.t_len() {
        m = m.max(hk_x_squared(traj.row(n), &grid, 1)?.sqrt());
    }
    Ok(m)
}

/// Time series of `y_xx(t, 0)` and `y_xxx(t, 0)` from one-sided stencils.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub second: Vec<f64>,
    pub third: Vec<f64>,
}

pub fn extract_traces(traj: &Trajectory) -> Result<Traces> {
    let grid = *traj.grid();
    let d2 = Stencil::new(2, grid.x_len(), grid.dx())?;
    let d3 = Stencil::new(3, grid.x_len(), grid.dx())?;
    let mut second = Vec::with_capacity(grid.t_len());
    let mut third = Vec::with_capacity(grid.t_len());
    for row in traj.rows() {
        second.push(d2.apply_at(row, 0));
        third.push(d3.apply_at(row, 0));
    }
    Ok(Traces { second, third })
}

/// The same traces at `x = 1`.
pub fn extract_traces_right(traj: &Trajectory) -> Result<Traces> {
    let grid = *traj.grid();
    let d2 = Stencil::new(2, grid.x_len(), grid.dx())?;
    let d3 = Stencil::new(3, grid.x_len(), grid.dx())?;
    let last = grid.nx();
    Ok(Traces {
        second: traj.rows().map(|r| d2.apply_at(r, last)).collect(),
        third: traj.rows().map(|r| d3.apply_at(r, last)).collect(),
    })
}
