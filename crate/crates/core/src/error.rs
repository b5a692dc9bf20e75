use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// `α` is too small for the sensitivity quotient to be meaningful.
    #[error("degenerate mode: {0}")]
    Degenerate(String),

    #[error("cannot reduce to an ordinary differential system: {0}")]
    Reduction(String),

    #[error("right-hand side is not in the range of L (residual {residual:.3e})")]
    Range { residual: f64 },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("mode matching failed: {0}")]
    Matching(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
