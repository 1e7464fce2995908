//! Seeded test functions `s(t) x²(1-x)² Σ a_k cos(kπx)` with
//! `s(t) = sin²(π(t-η)/(T-2η))` on `[η, T-η]` and zero outside.
//! Every member is clamped at both ends and vanishes in the time layers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WDerivatives;
use crate::error::{KsError, Result};
use crate::grid::{GridSpec, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: usize,
    /// Number of cosine modes `k = 0..modes`.
    pub modes: usize,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            members: 50,
            modes: 4,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMember {
    /// `a_k`, each in `[-1, 1]`.
    pub coeffs: Vec<f64>,
}

impl EnsembleMember {
    /// `[g, g', g'', g''', g'''']` for `g = x²(1-x)² Σ a_k cos(kπx)`.
    fn spatial(&self, x: f64) -> [f64; 5] {
        let q = [
            x * x * (1.0 - x) * (1.0 - x),
            2.0 * x - 6.0 * x * x + 4.0 * x * x * x,
            2.0 - 12.0 * x + 12.0 * x * x,
            -12.0 + 24.0 * x,
            24.0,
        ];
        let mut c = [0.0; 5];
        for (k, a) in self.coeffs.iter().enumerate() {
            let w = k as f64 * PI;
            for (j, cj) in c.iter_mut().enumerate() {
                *cj += a * w.powi(j as i32) * (w * x + j as f64 * 0.5 * PI).cos();
            }
        }
        const BINOM: [[f64; 5]; 5] = [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0, 0.0],
            [1.0, 2.0, 1.0, 0.0, 0.0],
            [1.0, 3.0, 3.0, 1.0, 0.0],
            [1.0, 4.0, 6.0, 4.0, 1.0],
        ];
        std::array::from_fn(|k| (0..=k).map(|j| BINOM[k][j] * q[j] * c[k - j]).sum())
    }

    /// `(s, s')` of the time bump.
    fn temporal(t: f64, t_final: f64, eta: f64) -> (f64, f64) {
        let len = t_final - 2.0 * eta;
        if t <= eta || t >= t_final - eta {
            return (0.0, 0.0);
        }
        let th = PI * (t - eta) / len;
        (th.sin().powi(2), (2.0 * th).sin() * PI / len)
    }

    pub fn trajectory(&self, grid: GridSpec, eta: f64) -> Result<Trajectory> {
        check_eta(&grid, eta)?;
        Trajectory::from_fn(grid, |t, x| {
            Self::temporal(t, grid.t_final(), eta).0 * self.spatial(x)[0]
        })
    }

    /// Closed-form derivatives, for checks free of stencil error.
    pub fn derivatives(&self, grid: GridSpec, eta: f64) -> Result<WDerivatives> {
        check_eta(&grid, eta)?;
        WDerivatives::from_fn(grid, |t, x| {
            let (s, st) = Self::temporal(t, grid.t_final(), eta);
            let g = self.spatial(x);
            [s * g[0], s * g[1], s * g[2], s * g[3], s * g[4], st * g[0]]
        })
    }
}

fn check_eta(grid: &GridSpec, eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 0.5 * grid.t_final()) {
        return Err(KsError::InvalidInput(format!("eta = {eta} outside (0, T/2)")));
    }
    Ok(())
}

/// `sin²(π(t-η)/(T-2η)) x²(1-x)²`.
pub fn bump_test_function(grid: GridSpec, eta: f64) -> Result<Trajectory> {
    EnsembleMember { coeffs: vec![1.0] }.trajectory(grid, eta)
}

/// The single-bump member.
pub fn bump_member() -> EnsembleMember {
    EnsembleMember { coeffs: vec![1.0] }
}

/// Same `spec` gives the same members on every run and platform.
pub fn random_ensemble(spec: &EnsembleSpec) -> Result<Vec<EnsembleMember>> {
    if spec.members == 0 || spec.modes == 0 {
        return Err(KsError::InvalidInput(
            "ensemble needs at least one member and one mode".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.members)
        .map(|_| EnsembleMember {
            coeffs: (0..spec.modes).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        })
        .collect())
}
