use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T, E = LqcError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LqcError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("policy is not stable: spectral radius of A+BK is {spectral_radius}")]
    UnstablePolicy { spectral_radius: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("state block is singular: min eigenvalue {min_eig:e}, max eigenvalue {max_eig:e}")]
    SingularBlock { min_eig: f64, max_eig: f64 },

    /// The iterate closest to convergence is attached when one exists.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        best: Option<Box<DMatrix<f64>>>,
    },

    #[error("feasible set is empty: {0}")]
    InfeasibleSet(String),

    #[error("control matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("system is not controllable in {steps} steps (rank {rank} < {dim})")]
    Uncontrollable { steps: usize, rank: usize, dim: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LqcError {
    pub(crate) fn dims(context: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Self {
        LqcError::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    /// True for errors caused by bad input rather than by the numerics. An
    /// empty feasible set counts: the budget is too small for the system.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            LqcError::Config(_)
                | LqcError::Json(_)
                | LqcError::DimensionMismatch { .. }
                | LqcError::Contract(_)
                | LqcError::InfeasibleSet(_)
        )
    }
}
