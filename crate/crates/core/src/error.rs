use thiserror::Error;

use crate::mdp::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed problem: {0}")]
    Shape(String),

    #[error("invalid problem: {0}")]
    Invalid(ValidationReport),

    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: expected stage {expected}, found {found}")]
    StageMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("not a probability law: {0}")]
    InvalidLaw(String),

    #[error("probability level {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("noise space at stage {stage} has {size} elements; a deterministic problem needs exactly one")]
    NotDeterministic { stage: usize, size: usize },

    #[error("{what} count {count} exceeds cap {cap}")]
    CapExceeded {
        what: &'static str,
        count: u128,
        cap: u128,
    },

    #[error("constrained problem is infeasible")]
    Infeasible,

    #[error("negative optimality gap {gap:e} at stage {stage}: subproblem optimum exceeds an admissible continuation")]
    NegativeGap { stage: usize, gap: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
