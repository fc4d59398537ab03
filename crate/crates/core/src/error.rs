use thiserror::Error;

/// Errors produced by the pose solvers and their building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point lies on the principal plane (depth is zero)")]
    DepthZero,
    #[error("point lies behind the preliminary camera")]
    NegativeDepth,
    #[error("too many correspondences behind the preliminary camera ({negative} of {total})")]
    TooManyNegativeDepths { negative: usize, total: usize },
    #[error("left 3x3 block of the projection matrix is singular (condition {0:e})")]
    SingularProjection(f64),
    #[error("calibration matrix is not invertible")]
    SingularCalibration,
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("degenerate points: mean centered radius {0:e} is too small")]
    DegeneratePoints(f64),
    #[error("zero quaternion")]
    ZeroQuaternion,
    #[error("too few points: got {got}, need at least {required}")]
    TooFewPoints { got: usize, required: usize },
    #[error("rank deficient system (singular value ratio {0:e})")]
    RankDeficient(f64),
    #[error("weight vector has length {got}, expected {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("non-finite weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("recovered rotation block is a reflection")]
    ReflectionDetected,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
