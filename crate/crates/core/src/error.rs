//! Error type shared by every module of the core crate.
//!
//! Array and step numbers carried by the variants are 1-based: array 1 is the
//! reference array, step 1 is the first emission.

use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not a proper rotation (max deviation {deviation:.3e})")]
    NonOrthonormal { deviation: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate geometry: source at step {step} is {distance:.3e} m from array {array}")]
    DegenerateGeometry {
        array: usize,
        step: usize,
        distance: f64,
    },

    #[error("degenerate timing: the first two emission times coincide")]
    DegenerateTiming,

    #[error("degenerate triangulation: first two reference DOAs are {angle_deg:.4} deg apart")]
    DegenerateTriangulation { angle_deg: f64 },

    #[error("degenerate registration for array {array}: source points are collinear")]
    DegenerateRegistration { array: usize },

    #[error("insufficient steps: need at least {needed}, found {found}")]
    InsufficientSteps { needed: usize, found: usize },

    #[error("distance estimation failed for array {array} at step {step}: no polyhedron converged")]
    SolverFailure { array: usize, step: usize },

    #[error("asynchronous fit for array {array}: only {survivors} points survived outlier rejection")]
    AllOutliers { array: usize, survivors: usize },

    #[error("singular normal equations: numerical rank {rank} of {dim} (gap ratio {gap_ratio:.3e})")]
    SingularNormalEquations {
        rank: usize,
        dim: usize,
        gap_ratio: f64,
    },

    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(&'static str),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
}

impl Error {
    /// True for errors caused by the input geometry or timing rather than
    /// the numerics of a solve.
    pub fn is_degenerate_input(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGeometry { .. }
                | Error::DegenerateTiming
                | Error::DegenerateTriangulation { .. }
                | Error::DegenerateRegistration { .. }
                | Error::InsufficientSteps { .. }
                | Error::SolverFailure { .. }
                | Error::AllOutliers { .. }
        )
    }
}
