use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Riccati iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("R + BᵀPB is numerically singular")]
    SingularInnerMatrix,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("prior stiffness must satisfy lambda >= 1, got {0}")]
    InvalidLambda(f64),

    #[error("Newton minimization did not converge: gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NewtonNonConvergence { grad_norm: f64, iterations: usize },

    #[error("noise reservoir is empty; build the model with calibration first")]
    ReservoirEmpty,

    #[error("noise calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("Langevin iterate norm {norm:.3e} exceeded the blowup threshold at step {step}")]
    NumericalBlowup { norm: f64, step: usize },

    #[error("no admissible sample after {attempts} attempts (last failure: {last_failure})")]
    RejectionExhausted { attempts: usize, last_failure: String },

    #[error("state norm {norm:.3e} exceeded the blowup threshold at t = {t}")]
    StateBlowup { norm: f64, t: usize },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("config validation error: {0}")]
    Validation(String),

    #[error("all {0} seeds failed")]
    AllSeedsFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used in batch failure accounting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularInnerMatrix => "singular_inner_matrix",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidLambda(_) => "invalid_lambda",
            Error::NewtonNonConvergence { .. } => "newton_non_convergence",
            Error::ReservoirEmpty => "reservoir_empty",
            Error::CalibrationFailure(_) => "calibration_failure",
            Error::NumericalBlowup { .. } => "numerical_blowup",
            Error::RejectionExhausted { .. } => "rejection_exhausted",
            Error::StateBlowup { .. } => "state_blowup",
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::AllSeedsFailed(_) => "all_seeds_failed",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
