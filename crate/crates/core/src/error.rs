use thiserror::Error;

use crate::nonlinear::PicardReport;

pub type Result<T> = std::result::Result<T, KsError>;

/// Hypotheses on the spatial part of the Carleman weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// β and β' bounded below by r > 0.
    Hip1B,
    /// β'' bounded above by -r < 0.
    Hip3B,
    /// |σ'β'| ≤ (r/4) min σ.
    Hip4B,
    /// φ₀ vanishes at both ends and peaks at T₀.
    Hip1P2P,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Hypothesis::Hip1B => "hip1B",
            Hypothesis::Hip3B => "hip3B",
            Hypothesis::Hip4B => "hip4B",
            Hypothesis::Hip1P2P => "hip1P/hip2P",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum KsError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too coarse: need nx >= {required}, have {nx}")]
    GridTooCoarse { nx: usize, required: usize },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular banded system at row {row} (time step {step})")]
    SingularSystem { step: usize, row: usize },

    #[error("compatibility violation: {0}")]
    CompatibilityViolation(String),

    #[error("scheme residual {residual:e} exceeds tolerance {tol:e} at step {step}")]
    ResidualExceeded { step: usize, residual: f64, tol: f64 },

    #[error("fixed-point iteration did not converge: {reason}")]
    NoConvergence {
        reason: String,
        report: Box<PicardReport>,
    },

    #[error("zero denominator: probe trajectories coincide")]
    ZeroDenominator,

    #[error("hypothesis ({hypothesis}) violated: {detail}")]
    HypothesisViolation {
        hypothesis: Hypothesis,
        detail: String,
    },

    #[error("test function not negligible outside the time window: max |w| = {max_outside:e}")]
    LayerViolation { max_outside: f64 },

    #[error("inf |y_xx(T0, .)| = {inf:e} is below the required floor {floor:e}")]
    InfConditionViolated { inf: f64, floor: f64 },
}
