use thiserror::Error;

/// Errors raised by the flow library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum WgfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("biases must be strictly increasing (index {index})")]
    UnsortedBiases { index: usize },

    #[error("weight {index} must be positive, got {value}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("CDF gap {gap:e} at index {index} is below the floor {floor:e}")]
    CdfGapUnderflow { index: usize, gap: f64, floor: f64 },

    #[error("nonpositive slope {slope:e} at z = {z}")]
    NonPositiveSlope { z: f64, slope: f64 },

    #[error("biases {first} and {second} are closer than 2*delta = {min_gap:e}")]
    BiasCollision {
        first: usize,
        second: usize,
        min_gap: f64,
    },

    #[error("quadrature did not converge on [{lo}, {hi}]")]
    Quadrature { lo: f64, hi: f64 },

    #[error("tridiagonal solve failed: zero pivot at row {row}")]
    SingularTridiagonal { row: usize },

    #[error("boundary density {value:e} exceeds {limit:e}")]
    BoundaryMass { value: f64, limit: f64 },

    #[error("step {step}: {source}")]
    Aborted {
        step: usize,
        #[source]
        source: Box<WgfError>,
    },
}

pub type Result<T> = std::result::Result<T, WgfError>;
