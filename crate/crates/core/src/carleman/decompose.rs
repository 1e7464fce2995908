//! `P w = e^{-λφ} L(e^{λφ} w)` and its split `P1 w + P2 w + R w`.

use super::{CarlemanWeight, LowerOrder, TimeWindow, WDerivatives};
use crate::error::Result;
use crate::grid::{GridSpec, Trajectory};

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub p1: Trajectory,
    pub p2: Trajectory,
    pub r: Trajectory,
    /// `P w` by the chain rule, independent of the split.
    pub direct: Trajectory,
    pub window: TimeWindow,
    /// `||P1 w + P2 w + R w - P w|| / ||P w||` in `L2` over the window.
    pub identity_residual: f64,
}

/// `[B0, .., B4]`: complete Bell polynomials in `a_k = λ ∂_x^k φ`, so that
/// `e^{-λφ} ∂_x^k e^{λφ} = B_k`.
fn bell(a: [f64; 4]) -> [f64; 5] {
    let [a1, a2, a3, a4] = a;
    [
        1.0,
        a1,
        a1 * a1 + a2,
        a1 * a1 * a1 + 3.0 * a1 * a2 + a3,
        a1.powi(4) + 6.0 * a1 * a1 * a2 + 4.0 * a1 * a3 + 3.0 * a2 * a2 + a4,
    ]
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Pointwise data shared by both routes.
struct Local {
    lambda: f64,
    /// `φ_x, φ_xx, φ_xxx, φ_xxxx`.
    px: [f64; 4],
    pt: f64,
    /// `σ, σ', σ''`.
    s: [f64; 3],
    /// `q0, q1, q2`.
    q: [f64; 3],
    /// `w, w_x, .., w_xxxx`.
    w: [f64; 5],
    wt: f64,
}

impl Local {
    fn gather(
        wd: &WDerivatives,
        weight: &CarlemanWeight,
        q: &LowerOrder,
        n: usize,
        i: usize,
    ) -> Self {
        Self {
            lambda: weight.lambda(),
            px: std::array::from_fn(|k| weight.phi_x(n, i, k + 1)),
            pt: weight.phi_t(n, i),
            s: std::array::from_fn(|k| weight.sigma_derivative(k)[i]),
            q: q.at(n, i),
            w: std::array::from_fn(|k| wd.d[k].at(n, i)),
            wt: wd.t.at(n, i),
        }
    }

    fn direct(&self) -> f64 {
        let l = self.lambda;
        let b = bell(self.px.map(|p| l * p));
        // e_k = e^{-λφ} ∂_x^k (e^{λφ} w)
        let e: [f64; 5] =
            std::array::from_fn(|k| (0..=k).map(|j| BINOM[k][j] * b[k - j] * self.w[j]).sum());
        let [s, s1, s2] = self.s;
        let [q0, q1, q2] = self.q;
        self.wt + l * self.pt * self.w[0] + s2 * e[2] + 2.0 * s1 * e[3] + s * e[4]
            + q2 * e[2]
            + q1 * e[1]
            + q0 * e[0]
    }

    fn split(&self) -> [f64; 3] {
        let l = self.lambda;
        let (l2, l3, l4) = (l * l, l * l * l, l * l * l * l);
        let [p1, p2, p3, p4] = self.px;
        let [s, s1, s2] = self.s;
        let [q0, q1, q2] = self.q;
        let [w, wx, wxx, wxxx, wxxxx] = self.w;
        // (φ_x^2 σ)_x
        let ax = 2.0 * p1 * p2 * s + p1 * p1 * s1;
        let big_p1 = 6.0 * l2 * p1 * p1 * s * wxx
            + l4 * p1.powi(4) * s * w
            + (s2 * wxx + 2.0 * s1 * wxxx + s * wxxxx)
            + 6.0 * l2 * ax * wx;
        let big_p2 = self.wt
            + 4.0 * l3 * p1.powi(3) * s * wx
            + 4.0 * l * p1 * s * wxxx
            + 4.0 * l3 * p1 * ax * w;
        let r = l * self.pt * w
            + 2.0 * l * p1 * s2 * wx
            + l2 * p1 * p1 * s2 * w
            + l * p2 * s2 * w
            + 6.0 * l * p1 * s1 * wxx
            + 6.0 * l2 * p1 * p2 * s1 * w
            + 6.0 * l * p2 * s1 * wx
            + 2.0 * l * p3 * s1 * w
            + 4.0 * l2 * p1 * p3 * s * w
            + 6.0 * l * p2 * s * wxx
            + 3.0 * l2 * p2 * p2 * s * w
            + 4.0 * l * p3 * s * wx
            + l * p4 * s * w
            + q0 * w
            + q1 * wx
            + q1 * l * p1 * w
            + q2 * wxx
            + 2.0 * l * q2 * p1 * wx
            + l2 * q2 * p1 * p1 * w
            + l * p2 * q2 * w
            - 2.0 * l3 * p1 * p1 * p2 * s * w
            - 2.0 * l3 * p1.powi(3) * s1 * w;
        [big_p1, big_p2, r]
    }
}

fn window_traj(grid: &GridSpec, window: &TimeWindow, f: impl Fn(usize, usize) -> f64) -> Trajectory {
    let mut out = Trajectory::zeros(*grid);
    for n in window.nodes() {
        for i in 0..grid.x_len() {
            out.row_mut(n)[i] = f(n, i);
        }
    }
    out
}

/// `P w` by the generalized Leibniz rule; rows outside the window are zero.
pub fn conjugated_operator(
    wd: &WDerivatives,
    weight: &CarlemanWeight,
    q: &LowerOrder,
    eta: f64,
) -> Result<Trajectory> {
    let grid = *wd.grid();
    grid.ensure_same(weight.grid(), "weight")?;
    q.check(&grid, None)?;
    let window = TimeWindow::new(&grid, eta)?;
    window.check_layers(wd.w(), eta)?;
    Ok(window_traj(&grid, &window, |n, i| {
        Local::gather(wd, weight, q, n, i).direct()
    }))
}

pub fn conjugate_decompose(
    wd: &WDerivatives,
    weight: &CarlemanWeight,
    q: &LowerOrder,
    eta: f64,
) -> Result<Decomposition> {
    let grid = *wd.grid();
    let direct = conjugated_operator(wd, weight, q, eta)?;
    let window = TimeWindow::new(&grid, eta)?;
    let mut parts: [Trajectory; 3] = std::array::from_fn(|_| Trajectory::zeros(grid));
    for n in window.nodes() {
        for i in 0..grid.x_len() {
            let v = Local::gather(wd, weight, q, n, i).split();
            for k in 0..3 {
                parts[k].row_mut(n)[i] = v[k];
            }
        }
    }
    let [p1, p2, r] = parts;
    let num = window.integrate(&grid, |n, i| {
        let d = p1.at(n, i) + p2.at(n, i) + r.at(n, i) - direct.at(n, i);
        d * d
    });
    let den = window.integrate(&grid, |n, i| direct.at(n, i).powi(2));
    let identity_residual = if num == 0.0 { 0.0 } else { (num / den).sqrt() };
    Ok(Decomposition {
        p1,
        p2,
        r,
        direct,
        window,
        identity_residual,
    })
}
