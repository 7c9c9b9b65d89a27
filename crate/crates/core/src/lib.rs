//! Finite-difference solvers for optimal control of a diffusion conditioned
//! on survival in a bounded domain.
//!
//! The coupled value/density system is solved on a finite horizon by a
//! lagged fixed-point iteration ([`coupled`]); its long-time limit is a
//! principal eigenvalue problem ([`stationary`]); [`mc`] simulates the
//! killed process for cross-checks.

pub mod config;
pub mod coupled;
pub mod error;
pub mod fp;
pub mod grid;
pub mod hamiltonian;
pub mod hjb;
pub mod mc;
pub mod problem;
pub mod sparse;
pub mod stationary;

pub use coupled::{
    solve_finite_horizon, solve_scaled, turnpike_distances, unscale, FiniteSolution, SolverOptions,
};
pub use error::{Error, Result};
pub use grid::{Field, Grid, SpaceTimeField, TimeGrid};
pub use hamiltonian::{ControlModel, GradPair, HamiltonianParams};
pub use problem::{CaseId, ControlTrajectory, CostSign, DiscreteProblem, ProblemSpec};
pub use stationary::{solve_stationary, EigenSolution, StationaryOptions};
