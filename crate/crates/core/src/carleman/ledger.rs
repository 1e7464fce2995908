//! Itemized balance of `<P1 w, P2 w>` after integration by parts.
//!
//! `<P1 w, P2 w> = I(w) + I(w_x) + I(w_xx) + I(w_xxx) + R0(w) + I_x`, where the
//! four `I` terms carry the sign conditions of the weight, `R0` collects the
//! lower-order remainders and `I_x` the spatial boundary terms.

use rayon::prelude::*;
use serde::Serialize;

use super::jet::Jet;
use super::{conjugate_decompose, CarlemanWeight, LowerOrder, TimeWindow, WDerivatives};
use crate::error::{KsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ledger {
    pub lambda: f64,
    /// Quadrature of `<P1 w, P2 w>`.
    pub direct: f64,
    pub i_w: f64,
    pub i_wx: f64,
    pub i_w2x: f64,
    pub i_w3x: f64,
    pub r0: f64,
    /// Boundary contribution at `x = 0` (sign included).
    pub i_x0: f64,
    /// Boundary contribution at `x = 1`.
    pub i_x1: f64,
    pub itemized: f64,
    /// `|direct - itemized| / max(|direct|, Σ|items|)`.
    pub mismatch: f64,
    pub norm: f64,
    /// `(direct - I_x) / ||w||²_{λ,φ}`; `NaN` when the norm vanishes.
    pub delta_hat: f64,
}

impl Ledger {
    pub fn i_x(&self) -> f64 {
        self.i_x0 + self.i_x1
    }

    /// `(name, value)` pairs in output order.
    pub fn terms(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("direct", self.direct),
            ("I_w", self.i_w),
            ("I_wx", self.i_wx),
            ("I_w2x", self.i_w2x),
            ("I_w3x", self.i_w3x),
            ("R0", self.r0),
            ("I_x0", self.i_x0),
            ("I_x1", self.i_x1),
            ("itemized", self.itemized),
            ("mismatch", self.mismatch),
            ("weighted_norm", self.norm),
            ("delta_hat", self.delta_hat),
        ]
    }
}

/// `||w||²_{λ,φ} = ∬ λ⁷φ⁷|w|² + λ⁵φ⁵|w_x|² + λ³φ³|w_xx|² + λφ|w_xxx|²` over the
/// window.
pub fn weighted_norm(wd: &WDerivatives, weight: &CarlemanWeight, eta: f64) -> Result<f64> {
    let grid = *wd.grid();
    grid.ensure_same(weight.grid(), "weight")?;
    let window = TimeWindow::new(&grid, eta)?;
    let l = weight.lambda();
    Ok(window.integrate(&grid, |n, i| {
        let lp = l * weight.phi(n, i);
        let lp2 = lp * lp;
        let d = |k: usize| wd.d[k].at(n, i).powi(2);
        lp * (lp2 * (lp2 * (lp2 * d(0) + d(1)) + d(2)) + d(3))
    }))
}

/// Pointwise coefficient of each quadratic form in the itemized sum.
struct Coeffs {
    i: [f64; 4],
    r_ww: f64,
    r_wwxx: f64,
    r_wx: f64,
    r_wxx: f64,
}

fn coefficients(weight: &CarlemanWeight, n: usize, i: usize) -> Coeffs {
    let l = weight.lambda();
    let (l2, l3) = (l * l, l * l * l);
    let (l4, l5) = (l2 * l2, l2 * l3);
    let inv = 1.0 / weight.phi0()[n];
    let p0t = weight.phi0_t()[n];
    let beta = Jet::from_slice(weight.beta_row(i));
    let sig_vals: Vec<f64> = (0..5).map(|k| weight.sigma_derivative(k)[i]).collect();
    let sig = Jet::from_slice(&sig_vals);
    let px = beta.dx().scale(inv);
    let a = px * px * sig;
    let ax = a.dx();
    let (p1, p2) = (px.value(), px.at(1));
    let (s, s1) = (sig.value(), sig.at(1));
    let b1 = beta.at(1);

    let i = [
        -6.0 * l.powi(7) * p1.powi(6) * p2 * s * s,
        -l5 * p1.powi(4) * s * (30.0 * p2 * s + 12.0 * p1 * s1),
        -l3 * p1 * p1 * s * (58.0 * p2 * s + 40.0 * p1 * s1),
        -l * s * (2.0 * p2 * s - 4.0 * p1 * s1),
    ];
    // (φ_x^4 σ)_t and (φ_x^2 σ)_t through φ0 only
    let a4_t = -4.0 * b1.powi(4) * s * p0t * inv.powi(5);
    let a_t = -2.0 * b1 * b1 * s * p0t * inv.powi(3);
    let r_ww = 12.0 * l5 * (px.powi(3) * sig * ax).at(2) - 0.5 * l4 * a4_t
        - 2.0 * l5 * (px.powi(5) * sig * sig).at(3)
        - 12.0 * l5 * (px * ax * ax).at(1);
    let r_wwxx = 4.0 * l3 * (px * ax).at(2) * s;
    let r_wx = 3.0 * l2 * a_t - 2.0 * l3 * ((px.powi(3) * sig).dx().dx() * sig).at(1)
        - 4.0 * l3 * (sig * (px * ax).dx()).at(1)
        + 12.0 * l3 * (ax * px * sig).at(2);
    let r_wxx = -2.0 * l * (px * sig * sig.dx().dx()).at(1);
    Coeffs {
        i,
        r_ww,
        r_wwxx,
        r_wx,
        r_wxx,
    }
}

/// Boundary integrand `10λ³φ_x³σ²|w_xx|² + 2λφ_xσσ_xx|w_xx|² + 2λφ_xσ²|w_xxx|²`.
fn boundary_density(wd: &WDerivatives, weight: &CarlemanWeight, n: usize, i: usize) -> f64 {
    let l = weight.lambda();
    let p1 = weight.phi_x(n, i, 1);
    let s = weight.sigma_derivative(0)[i];
    let s2 = weight.sigma_derivative(2)[i];
    let wxx = wd.d[2].at(n, i);
    let wxxx = wd.d[3].at(n, i);
    (10.0 * l.powi(3) * p1.powi(3) * s * s + 2.0 * l * p1 * s * s2) * wxx * wxx
        + 2.0 * l * p1 * s * s * wxxx * wxxx
}

pub fn inner_product_ledger(
    wd: &WDerivatives,
    weight: &CarlemanWeight,
    eta: f64,
) -> Result<Ledger> {
    let grid = *wd.grid();
    let dec = conjugate_decompose(wd, weight, &LowerOrder::zero(), eta)?;
    let window = dec.window;
    let direct = window.integrate(&grid, |n, i| dec.p1.at(n, i) * dec.p2.at(n, i));

    let mut sums = [0.0; 5];
    {
        let nx = grid.x_len();
        let rows: Vec<[Vec<f64>; 5]> = window
            .nodes()
            .map(|n| {
                let mut out: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; nx]);
                for i in 0..nx {
                    let c = coefficients(weight, n, i);
                    let d = |k: usize| wd.d[k].at(n, i);
                    for k in 0..4 {
                        out[k][i] = c.i[k] * d(k) * d(k);
                    }
                    out[4][i] = c.r_ww * d(0) * d(0)
                        + c.r_wwxx * d(0) * d(2)
                        + c.r_wx * d(1) * d(1)
                        + c.r_wxx * d(2) * d(2);
                }
                out
            })
            .collect();
        for (k, s) in sums.iter_mut().enumerate() {
            *s = window.integrate(&grid, |n, i| rows[n - window.lo][k][i]);
        }
    }
    let last = grid.x_len() - 1;
    let i_x0 = -window.integrate_t(&grid, |n| boundary_density(wd, weight, n, 0));
    let i_x1 = window.integrate_t(&grid, |n| boundary_density(wd, weight, n, last));
    let [i_w, i_wx, i_w2x, i_w3x, r0] = sums;
    let itemized = i_w + i_wx + i_w2x + i_w3x + r0 + i_x0 + i_x1;
    let scale = direct
        .abs()
        .max(sums.iter().map(|v| v.abs()).sum::<f64>() + i_x0.abs() + i_x1.abs());
    let mismatch = if scale == 0.0 {
        0.0
    } else {
        (direct - itemized).abs() / scale
    };
    let norm = weighted_norm(wd, weight, eta)?;
    let delta_hat = if norm > 0.0 {
        (direct - i_x0 - i_x1) / norm
    } else {
        f64::NAN
    };
    Ok(Ledger {
        lambda: weight.lambda(),
        direct,
        i_w,
        i_wx,
        i_w2x,
        i_w3x,
        r0,
        i_x0,
        i_x1,
        itemized,
        mismatch,
        norm,
        delta_hat,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub min_delta_hat: f64,
    pub max_mismatch: f64,
    /// Ensemble member attaining `min_delta_hat`.
    pub worst_member: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    /// Smallest grid `λ` from which `δ̂ > 0` holds for every member and every
    /// larger grid value.
    pub lambda0: Option<f64>,
}

impl ScanReport {
    pub fn row(&self, lambda: f64) -> Option<&ScanRow> {
        self.rows.iter().find(|r| r.lambda == lambda)
    }
}

/// Ledger of every member at every `λ`; members run in parallel.
pub fn lambda_scan(
    members: &[WDerivatives],
    weight: &CarlemanWeight,
    lambdas: &[f64],
    eta: f64,
) -> Result<ScanReport> {
    if members.is_empty() {
        return Err(KsError::InvalidInput("empty test ensemble".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let w = weight.with_lambda(lambda);
        let ledgers: Vec<Ledger> = members
            .par_iter()
            .map(|m| inner_product_ledger(m, &w, eta))
            .collect::<Result<_>>()?;
        let (worst_member, min_delta_hat) = ledgers
            .iter()
            .map(|l| l.delta_hat)
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, d)| {
                if d < acc.1 || d.is_nan() {
                    (k, d)
                } else {
                    acc
                }
            });
        let max_mismatch = ledgers.iter().map(|l| l.mismatch).fold(0.0, f64::max);
        rows.push(ScanRow {
            lambda,
            min_delta_hat,
            max_mismatch,
            worst_member,
        });
    }
    let mut lambda0 = None;
    for r in rows.iter().rev() {
        if r.min_delta_hat > 0.0 {
            lambda0 = Some(r.lambda);
        } else {
            break;
        }
    }
    Ok(ScanReport { rows, lambda0 })
}
