//! Carleman weight `φ(t,x) = β(x) / φ0(t)` and its hypotheses.

use crate::error::{Hypothesis, KsError, Result};
use crate::grid::{diff_x, GridSpec, ScalarField1D};

/// Number of analytic derivatives carried for `β` (orders `0..=5`).
pub const BETA_ORDERS: usize = 6;

/// Spatial profile with closed-form derivatives.
pub trait SpatialProfile: Send + Sync {
    /// `[β, β', ..., β^(5)]` at `x`.
    fn derivatives(&self, x: f64) -> [f64; BETA_ORDERS];
}

/// Time profile vanishing at both ends, with closed-form derivative.
pub trait TimeProfile: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
    /// Time of the maximum.
    fn peak(&self) -> f64;
}

/// `β(x) = sqrt(1 + x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SqrtProfile;

impl SpatialProfile for SqrtProfile {
    fn derivatives(&self, x: f64) -> [f64; BETA_ORDERS] {
        let u = 1.0 + x;
        let s = u.sqrt();
        // d^k/dx^k u^{1/2} = c_k u^{1/2 - k}
        [
            s,
            0.5 / s,
            -0.25 / (u * s),
            0.375 / (u * u * s),
            -0.9375 / (u * u * u * s),
            3.281_25 / (u * u * u * u * s),
        ]
    }
}

/// `t (T - t)` when `T0 = T/2`; otherwise the `C^1` piecewise quadratic
/// `t (2 T0 - t) / T0^2` on `[0, T0]` and `(T - t)(T + t - 2 T0) / (T - T0)^2`
/// on `[T0, T]`, peaking at `1`.
#[derive(Debug, Clone, Copy)]
pub struct BumpProfile {
    t_final: f64,
    t0: f64,
    symmetric: bool,
}

impl BumpProfile {
    pub fn new(t_final: f64, t0: f64) -> Result<Self> {
        if !(t0 > 0.0 && t0 < t_final) {
            return Err(KsError::InvalidInput(format!(
                "T0 = {t0} must lie in (0, {t_final})"
            )));
        }
        let symmetric = (t0 - 0.5 * t_final).abs() <= 1e-12 * t_final;
        Ok(Self {
            t_final,
            t0,
            symmetric,
        })
    }
}

impl TimeProfile for BumpProfile {
    fn value(&self, t: f64) -> f64 {
        let (tf, t0) = (self.t_final, self.t0);
        if self.symmetric {
            t * (tf - t)
        } else if t <= t0 {
            t * (2.0 * t0 - t) / (t0 * t0)
        } else {
            (tf - t) * (tf + t - 2.0 * t0) / ((tf - t0) * (tf - t0))
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        let (tf, t0) = (self.t_final, self.t0);
        if self.symmetric {
            tf - 2.0 * t
        } else if t <= t0 {
            2.0 * (t0 - t) / (t0 * t0)
        } else {
            2.0 * (t0 - t) / ((tf - t0) * (tf - t0))
        }
    }

    fn peak(&self) -> f64 {
        self.t0
    }
}

/// Sampled weight on a grid, with the margins of its hypotheses.
#[derive(Debug, Clone)]
pub struct CarlemanWeight {
    grid: GridSpec,
    /// `beta[i][k] = β^(k)(x_i)`.
    beta: Vec<[f64; BETA_ORDERS]>,
    phi0: Vec<f64>,
    phi0_t: Vec<f64>,
    t0: f64,
    /// Largest `r` with `β, β' >= r` and `β'' <= -r`.
    r: f64,
    /// Largest `ε` for which the four sign conditions hold on the grid.
    epsilon: f64,
    /// Values of the four sign combinations divided by `-β`, minimised over `x`.
    sign_margins: [f64; 4],
    sigma: ScalarField1D,
    /// `σ', σ'', σ''', σ''''` sampled with `diff_x`.
    sigma_derivs: [Vec<f64>; 4],
    lambda: f64,
}

impl CarlemanWeight {
    pub fn new(
        grid: GridSpec,
        sigma: &ScalarField1D,
        beta: &dyn SpatialProfile,
        phi0: &dyn TimeProfile,
        lambda: f64,
    ) -> Result<Self> {
        grid.ensure_same(sigma.grid(), "sigma")?;
        let xs = grid.xs();
        let ts = grid.ts();
        let b: Vec<[f64; BETA_ORDERS]> = xs.iter().map(|&x| beta.derivatives(x)).collect();
        let mut p: Vec<f64> = ts.iter().map(|&t| phi0.value(t)).collect();
        // exact zeros at the ends
        p[0] = 0.0;
        *p.last_mut().expect("nonempty") = 0.0;
        let pt = ts.iter().map(|&t| phi0.derivative(t)).collect();
        let sigma_derivs = [
            diff_x(sigma, 1)?.into_values(),
            diff_x(sigma, 2)?.into_values(),
            diff_x(sigma, 3)?.into_values(),
            diff_x(sigma, 4)?.into_values(),
        ];
        let mut w = Self {
            grid,
            beta: b,
            phi0: p,
            phi0_t: pt,
            t0: phi0.peak(),
            r: 0.0,
            epsilon: 0.0,
            sign_margins: [0.0; 4],
            sigma: sigma.clone(),
            sigma_derivs,
            lambda,
        };
        w.validate(phi0)?;
        Ok(w)
    }

    fn validate(&mut self, phi0: &dyn TimeProfile) -> Result<()> {
        let min_b = self.beta.iter().map(|b| b[0]).fold(f64::INFINITY, f64::min);
        let min_b1 = self.beta.iter().map(|b| b[1]).fold(f64::INFINITY, f64::min);
        let max_b2 = self.beta.iter().map(|b| b[2]).fold(f64::NEG_INFINITY, f64::max);
        if !(min_b > 0.0 && min_b1 > 0.0) {
            return Err(KsError::HypothesisViolation {
                hypothesis: Hypothesis::Hip1B,
                detail: format!("min beta = {min_b:e}, min beta' = {min_b1:e}"),
            });
        }
        if !(max_b2 < 0.0) {
            return Err(KsError::HypothesisViolation {
                hypothesis: Hypothesis::Hip3B,
                detail: format!("max beta'' = {max_b2:e} is not negative"),
            });
        }
        self.r = min_b.min(min_b1).min(-max_b2);
        let min_sigma = self.sigma.min();
        let max_coupling = self
            .beta
            .iter()
            .zip(&self.sigma_derivs[0])
            .map(|(b, s1)| (s1 * b[1]).abs())
            .fold(0.0_f64, f64::max);
        let bound = 0.25 * self.r * min_sigma;
        if max_coupling > bound {
            return Err(KsError::HypothesisViolation {
                hypothesis: Hypothesis::Hip4B,
                detail: format!("max |sigma' beta'| = {max_coupling:e} exceeds (r/4) min sigma = {bound:e}"),
            });
        }
        let peak = phi0.value(self.t0);
        let n = self.phi0.len();
        let bad_interior = self.phi0[1..n - 1]
            .iter()
            .any(|&p| !(p > 0.0 && p <= peak * (1.0 + 1e-12)));
        if phi0.value(0.0).abs() > 1e-12
            || phi0.value(self.grid.t_final()).abs() > 1e-12
            || bad_interior
        {
            return Err(KsError::HypothesisViolation {
                hypothesis: Hypothesis::Hip1P2P,
                detail: "time profile must vanish at the ends and peak at T0".into(),
            });
        }
        let mut margins = [f64::INFINITY; 4];
        for (i, b) in self.beta.iter().enumerate() {
            let s = self.sigma.values()[i];
            let s1 = self.sigma_derivs[0][i];
            let combos = [
                b[2],
                30.0 * b[2] * s + 12.0 * b[1] * s1,
                58.0 * b[2] * s + 40.0 * b[1] * s1,
                2.0 * b[2] * s - 4.0 * b[1] * s1,
            ];
            for k in 0..4 {
                margins[k] = margins[k].min(-combos[k] / b[0]);
            }
        }
        self.sign_margins = margins;
        self.epsilon = margins.iter().copied().fold(f64::INFINITY, f64::min);
        if !(self.epsilon > 0.0) {
            return Err(KsError::HypothesisViolation {
                hypothesis: Hypothesis::Hip4B,
                detail: format!("sign conditions fail: margins {margins:?}"),
            });
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut w = self.clone();
        w.lambda = lambda;
        w
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sign_margins(&self) -> [f64; 4] {
        self.sign_margins
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn sigma(&self) -> &ScalarField1D {
        &self.sigma
    }

    /// `σ^(k)` samples for `k` in `0..=4`.
    pub fn sigma_derivative(&self, k: usize) -> &[f64] {
        match k {
            0 => self.sigma.values(),
            k => &self.sigma_derivs[k - 1],
        }
    }

    /// `β^(k)(x_i)`.
    pub fn beta(&self, i: usize, k: usize) -> f64 {
        self.beta[i][k]
    }

    pub fn beta_row(&self, i: usize) -> &[f64; BETA_ORDERS] {
        &self.beta[i]
    }

    pub fn phi0(&self) -> &[f64] {
        &self.phi0
    }

    pub fn phi0_t(&self) -> &[f64] {
        &self.phi0_t
    }

    /// `φ(t_n, x_i)`; infinite on the end rows.
    pub fn phi(&self, n: usize, i: usize) -> f64 {
        self.beta[i][0] / self.phi0[n]
    }

    /// `∂_x^k φ(t_n, x_i)`.
    pub fn phi_x(&self, n: usize, i: usize, k: usize) -> f64 {
        self.beta[i][k] / self.phi0[n]
    }

    /// `φ_t(t_n, x_i)`.
    pub fn phi_t(&self, n: usize, i: usize) -> f64 {
        -self.beta[i][0] * self.phi0_t[n] / (self.phi0[n] * self.phi0[n])
    }

    /// `φ_xt(t_n, x_i)`.
    pub fn phi_xt(&self, n: usize, i: usize) -> f64 {
        -self.beta[i][1] * self.phi0_t[n] / (self.phi0[n] * self.phi0[n])
    }
}

/// `β = sqrt(1+x)` over the time profile peaking at `t0`.
pub fn make_default_weight(grid: GridSpec, sigma: &ScalarField1D, t0: f64) -> Result<CarlemanWeight> {
    let profile = BumpProfile::new(grid.t_final(), t0)?;
    CarlemanWeight::new(grid, sigma, &SqrtProfile, &profile, 1.0)
}
