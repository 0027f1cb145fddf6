use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid trim fraction: {0}")]
    InvalidTrim(String),

    #[error("singular design (instance {instance:?}): smallest covariance eigenvalue {min_eigenvalue:e}")]
    SingularDesign {
        instance: Option<usize>,
        min_eigenvalue: f64,
    },

    #[error("LASSO did not converge after {sweeps} sweeps (KKT residual {kkt_residual:e})")]
    ConvergenceFailure { sweeps: usize, kkt_residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Attach an instance id to a `SingularDesign` error.
    pub(crate) fn for_instance(self, id: usize) -> Self {
        match self {
            Error::SingularDesign { min_eigenvalue, .. } => Error::SingularDesign {
                instance: Some(id),
                min_eigenvalue,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
