use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("under-determined fit: {samples} samples for {parameters} basis terms")]
    UnderDetermined { samples: usize, parameters: usize },

    /// The coverage constraint could not be met; the best iterate is attached.
    #[error("infeasible fit: outlier fraction {outlier_fraction:.4} exceeds target {target:.4}")]
    InfeasibleFit {
        outlier_fraction: f64,
        target: f64,
        best: Box<crate::guardian::PsosClassifier>,
    },

    #[error("degenerate bandwidth: {0}")]
    DegenerateBandwidth(String),

    #[error("query outside estimator support (marginal density {0:e})")]
    OutOfSupport(f64),

    #[error("model error: {0}")]
    Model(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
