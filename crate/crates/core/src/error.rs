use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("node {node} has no neighbor on axis {axis}")]
    NoNeighbor { node: usize, axis: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("grids do not match")]
    GridMismatch,

    #[error("degenerate mass {mass:e} at time slice {slice}")]
    DegenerateMass { slice: usize, mass: f64 },

    #[error("initial density vanishes on the grid")]
    ZeroDensity,

    #[error("matrix is singular to working precision (pivot {pivot}, value {value:e})")]
    SingularMatrix { pivot: usize, value: f64 },

    #[error("Newton iteration did not converge at step {step} after {iterations} iterations (residual {residual:e})")]
    NewtonNoConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "eigen iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("scheme structure violated: {0}")]
    StructureViolation(String),

    #[error("stationary iteration did not converge after {iterations} iterations (gaps p={gap_p:e}, u={gap_u:e})")]
    StationaryNoConvergence {
        iterations: usize,
        gap_p: f64,
        gap_u: f64,
    },

    #[error("overflow while un-scaling at time slice {slice}")]
    Overflow { slice: usize },

    #[error("config error: {0}")]
    Config(String),
}
