use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A function was evaluated outside its domain (sqrt of a negative
    /// number, division by zero, ...). `context` names the offending
    /// sub-expression or term.
    #[error("domain error in `{context}`: {detail}")]
    Domain { context: String, detail: String },

    #[error("syntax error at byte {offset}: expected {}", expected.join(" | "))]
    Syntax { offset: usize, expected: Vec<String> },

    #[error("unknown function `{0}`")]
    UnknownFunction(String),

    #[error("unbound name `{0}`")]
    UnboundName(String),

    #[error("rank/dimension mismatch: {0}")]
    Shape(String),

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("inconsistent gauge: residual {residual:e} exceeds tolerance {tolerance:e}")]
    InconsistentGauge { residual: f64, tolerance: f64 },

    #[error("under-determined system: rank {rank} of {dim} after gauge rows")]
    UnderDetermined { rank: usize, dim: usize },

    /// Infinite acceleration (pure S_n dynamics at zero spatial velocity).
    #[error("blow-up: {0}")]
    BlowUp(String),

    #[error("step size underflow at tau = {tau}: h = {h:e}")]
    StepUnderflow { tau: f64, h: f64 },

    #[error("map is not strictly monotone: {0}")]
    NonMonotone(String),

    #[error("cannot project onto gauge: {0}")]
    CannotProject(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn domain(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Domain {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Re-labels a domain error with an outer context (e.g. the printed
    /// sub-expression that produced it). Other variants pass through.
    pub fn in_context(self, context: impl Into<String>) -> Self {
        match self {
            Error::Domain { detail, .. } => Error::Domain {
                context: context.into(),
                detail,
            },
            other => other,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Errors that stem from the physics (domain, blow-up, stiffness)
    /// rather than from malformed input.
    pub fn is_runtime(&self) -> bool {
        !matches!(
            self,
            Error::Config { .. }
                | Error::Syntax { .. }
                | Error::UnknownFunction(_)
                | Error::UnboundName(_)
                | Error::InvalidArgument(_)
        )
    }
}
