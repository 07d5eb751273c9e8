use thiserror::Error;

/// Errors raised by the numerical lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unsupported derivative order {0:?}")]
    UnsupportedOrder(crate::lagrangian::DerivativeOrder),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("infeasible volume projection: {count} points with floor {floor} exceed target volume {target}")]
    InfeasibleProjection {
        count: usize,
        floor: f64,
        target: f64,
    },

    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFinite {
        quantity: &'static str,
        iteration: usize,
        iterate: Vec<f64>,
    },

    #[error("point index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("jet field has length {got}, measure has {expected} points")]
    LengthMismatch { expected: usize, got: usize },

    #[error("weight of point {point} becomes non-positive ({weight}) at tau = {tau}")]
    NonPositiveWeight { point: usize, tau: f64, weight: f64 },

    #[error("negative Lagrange weight input A[{index}] = {value}")]
    NegativeInput { index: usize, value: f64 },

    #[error("second variation of l at point {point} is {value}, below -tau_psd*scale = {bound}")]
    NotQ1Positive {
        point: usize,
        value: f64,
        bound: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("state file: {0}")]
    State(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}
