use thiserror::Error;

#[derive(Debug, Error)]
pub enum BiopError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} violates the causal sparsity pattern (off-pattern norm {magnitude:.3e})")]
    NonCausal { what: &'static str, magnitude: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("matrix is numerically singular: {0}")]
    Singular(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("linear system residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    Residual { residual: f64, tol: f64 },

    #[error("solver did not converge after {iterations} iterations (last objective {objective:.6e})")]
    NotConverged { iterations: usize, objective: f64 },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BiopError {
    /// Stable short name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DimensionMismatch(_) => "dimension_mismatch",
            Self::InvalidArgument(_) => "invalid_argument",
            Self::NonCausal { .. } => "non_causal",
            Self::NonFinite(_) => "non_finite",
            Self::Singular(_) => "singular",
            Self::Hypothesis(_) => "hypothesis",
            Self::Residual { .. } => "residual",
            Self::NotConverged { .. } => "not_converged",
            Self::UnknownStrategy { .. } => "unknown_strategy",
            Self::Config(_) => "config",
            Self::Csv(_) => "csv",
            Self::Io(_) => "io",
        }
    }
}

pub type Result<T, E = BiopError> = std::result::Result<T, E>;
