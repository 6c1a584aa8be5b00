use thiserror::Error;

/// Errors raised by the estimation, asymptotic and risk routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("matrix is not symmetric (asymmetry {asymmetry:e} exceeds tolerance {tolerance:e})")]
    NonSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPd(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular design: X'X is not invertible ({0})")]
    SingularDesign(String),

    #[error("near singular: {0}")]
    NearSingular(String),

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonSymmetric { .. }
                | Error::NotPsd { .. }
                | Error::NotPd(_)
                | Error::RankDeficient(_)
                | Error::SingularDesign(_)
                | Error::NearSingular(_)
                | Error::NonFinite(_)
                | Error::Simulation(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
