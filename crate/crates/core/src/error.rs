use std::path::PathBuf;

use thiserror::Error;

use crate::grid::NormPair;

/// Why a critical-point search rejected a seed.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedFailure {
    /// Newton on the gradient did not reach `tol_crit` within the iteration cap.
    NotConverged { residual: f64 },
    /// The Hessian at the (candidate) point has `|det H| <= tol_deg`.
    Degenerate { location: Vec<f64>, det: f64 },
    /// The seed lies outside the computational box.
    OutsideBox,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("potential model: {0}")]
    ModelDomain(String),

    #[error("no non-degenerate critical point found ({} seeds rejected)", failures.len())]
    NoCriticalPoints { failures: Vec<SeedFailure> },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields are defined on different grids")]
    GridMismatch,

    #[error("invalid peak set: {0}")]
    InvalidPeaks(String),

    #[error("star norm overflow at grid point {index} {point:?}")]
    StarNormOverflow { index: usize, point: Vec<f64> },

    #[error("degenerate kernel basis (Gram condition number {condition:.3e})")]
    DegenerateKernel { condition: f64 },

    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("coercivity probe: {0}")]
    Probe(String),

    #[error("trust region violated: {0}")]
    TrustRegion(String),

    #[error("fixed-point iteration did not contract within {iterations} iterations")]
    NonContraction { iterations: usize, history: Vec<NormPair> },

    #[error("peak {peak} left its search ball (|y - xi| = {distance:.3e} > delta = {delta:.3e})")]
    BallExit { peak: usize, distance: f64, delta: f64 },

    #[error("outer Jacobian is numerically singular (condition {condition:.3e})")]
    DegenerateOuter { condition: f64 },

    #[error("outer iteration did not converge within {iterations} iterations (max |a| = {max_multiplier:.3e})")]
    OuterNonConvergence { iterations: usize, max_multiplier: f64 },

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("oracle Newton diverged: {0}")]
    OracleDivergence(String),

    #[error("eigensolve: {0}")]
    Eigen(String),

    #[error("config: {0}")]
    Config(String),

    #[error("malformed field file {path:?} at byte {offset}: {message}")]
    FieldFormat { path: PathBuf, offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
