use thiserror::Error;

/// Failure taxonomy shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FtnError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("eigen-solver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("time {t} lies outside the support [-{half}, {half}]")]
    OutOfInterval { t: f64, half: f64 },
    #[error("no stored index satisfies the tail-energy criterion (largest stored lambda = {smallest_lambda:e})")]
    BasisTooSmall { smallest_lambda: f64 },
    #[error("basis mismatch: basis c = {basis_c}, pulse requires 2*ts*w = {required}")]
    BasisMismatch { basis_c: f64, required: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("infeasible design: {0}")]
    Infeasible(String),
    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),
    #[error("noise covariance is not positive definite (pivot {pivot} = {value:e})")]
    CovarianceNotPd { pivot: usize, value: f64 },
}

impl FtnError {
    /// Stable taxonomy name, printed by the CLI on stderr.
    pub fn kind(&self) -> &'static str {
        match self {
            FtnError::InvalidConfig(_) => "InvalidConfig",
            FtnError::ConvergenceFailure(_) => "ConvergenceFailure",
            FtnError::OutOfInterval { .. } => "OutOfInterval",
            FtnError::BasisTooSmall { .. } => "BasisTooSmall",
            FtnError::BasisMismatch { .. } => "BasisMismatch",
            FtnError::DimensionMismatch { .. } => "DimensionMismatch",
            FtnError::Infeasible(_) => "Infeasible",
            FtnError::NoConvergence(_) => "NoConvergence",
            FtnError::CovarianceNotPd { .. } => "CovarianceNotPD",
        }
    }

    /// True for failures caused by bad user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            FtnError::InvalidConfig(_)
                | FtnError::BasisMismatch { .. }
                | FtnError::DimensionMismatch { .. }
                | FtnError::Infeasible(_)
                | FtnError::OutOfInterval { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, FtnError>;
