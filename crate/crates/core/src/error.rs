use alloc::boxed::Box;
use alloc::string::String;

use crate::projection::ProjectionResult;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("constraint {constraint} evaluated outside its domain at t = {t}")]
    EvaluationDomain { constraint: usize, t: f64 },

    #[error("row {row} (constraint {source_index}) has a vanishing gradient (|a| = {norm:e})")]
    ZeroGradientRow {
        row: usize,
        source_index: usize,
        norm: f64,
    },

    #[error("projection target is empty after {sweeps} sweeps; try a smaller time step")]
    Infeasible { sweeps: usize },

    #[error("projection did not converge in {} sweeps (kkt residual {:e})", .0.iterations, .0.kkt_residual)]
    MaxIterations(Box<ProjectionResult>),

    #[error("row {row} has offset {offset:e}; the set is not a cone through the origin")]
    NotACone { row: usize, offset: f64 },

    #[error("restitution with time-dependent constraints is not supported")]
    UnsupportedTimeDependent,

    #[error("spheres {i} and {j} have coincident centers")]
    CoincidentCenters { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("force evaluation failed at t = {t}")]
    ForceEvaluation { t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
