use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the analytic pipeline and the Monte Carlo oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical instability in {context}: raw value {value:e} lies outside [-1e-6, 1 + 1e-6]")]
    NumericalInstability { context: String, value: f64 },

    #[error("cannot condition on {m} lineages at divergence: P = {probability:e}")]
    ConditioningImpossible { m: usize, probability: f64 },

    #[error("quadrature did not converge: estimated error {achieved:e} exceeds tolerance {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("distribution is degenerate: {0}")]
    Degenerate(String),

    #[error(
        "rejection sampling infeasible: acceptance probability {acceptance:e} for {m} lineages \
         at divergence (need at least {minimum:e})"
    )]
    InfeasibleConditioning {
        m: usize,
        acceptance: f64,
        minimum: f64,
    },

    #[error("model {model}: {source}")]
    InModel { model: u8, source: Box<Error> },
}

impl Error {
    /// Attach the index of the pairwise model that failed.
    pub fn in_model(self, model: u8) -> Self {
        Error::InModel {
            model,
            source: Box::new(self),
        }
    }

    /// The innermost error, with any model annotation stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InModel { source, .. } => source.root(),
            other => other,
        }
    }
}
