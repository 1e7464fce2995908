//! Numerical laboratory for the variable-coefficient Kuramoto-Sivashinsky
//! equation on `(0,T) x (0,1)` with clamped boundary conditions.
//!
//! * [`grid`]: uniform grids, finite differences, discrete Sobolev norms.
//! * [`linear`] and [`nonlinear`]: implicit solvers and fixed-point iteration.
//! * [`carleman`]: weight construction, conjugated-operator decomposition and
//!   numerical audit of the weighted estimate.
//! * [`inverse`]: synthetic measurements, difference systems, stability
//!   functional and recovery of the anti-diffusion coefficient.

pub mod banded;
pub mod carleman;
pub mod error;
pub mod grid;
pub mod inverse;
pub mod linear;
pub mod nonlinear;

pub use error::{Hypothesis, KsError, Result};
pub use grid::{GridSpec, NormKind, Sampled, ScalarField1D, Trajectory};
pub use linear::{BoundaryData, CoefficientField, LinearSolver, LinearSolverConfig};
pub use nonlinear::{solve_ks, NonlinearSolveConfig, PicardReport};
