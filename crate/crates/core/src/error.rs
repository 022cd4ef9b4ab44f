use thiserror::Error;

/// Failures raised by the forward model, the estimators and the limit machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PossError {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("singular geometry: {0}")]
    Singularity(String),

    #[error(
        "volume integration did not converge at lambda = {lambda_m} m: \
         relative error {achieved:.3e} > target {target:.3e} after {grid} points per axis"
    )]
    Integration {
        lambda_m: f64,
        achieved: f64,
        target: f64,
        grid: usize,
    },

    #[error("division by zero: {0}")]
    Division(String),

    #[error("estimates have zero spread (all equal to {value:e})")]
    ZeroWidth { value: f64 },

    #[error("non-uniform sampling at sample {index}")]
    NonUniformSampling { index: usize },
}

impl PossError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PossError::InvalidInput(msg.into())
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PossError::Integration { .. }
                | PossError::Division(_)
                | PossError::ZeroWidth { .. }
                | PossError::Singularity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PossError>;
