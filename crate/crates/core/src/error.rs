use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("training set is empty")]
    EmptySamples,
    #[error("regularized Gram matrix is numerically singular (condition estimate {condition_estimate:e})")]
    SingularSystem { condition_estimate: f64 },
    #[error("update batch is numerically degenerate; split the batch and retry")]
    DegenerateBatch,
    #[error("misclassification cost would become negative ({0})")]
    NegativeCost(f64),
    #[error("no region activates at t = {0} s")]
    NoActivation(f64),
    #[error("data does not match the model: {0}")]
    DataMismatch(&'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),
}
