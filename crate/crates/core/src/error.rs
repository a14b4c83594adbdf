use thiserror::Error;

/// Errors raised by model construction, estimation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the admissible domain.
    #[error("{0}")]
    Domain(String),

    /// Fewer estimating equations than free parameters.
    #[error("under-determined system: {params} parameters but only {equations} equations")]
    UnderDetermined { params: usize, equations: usize },

    /// Design matrix carries no information at all.
    #[error("degenerate design matrix (rank 0)")]
    Rank,

    /// `I - A` is singular or too badly conditioned to invert.
    #[error("I - A is not invertible (condition number {cond:.3e})")]
    NotInvertible { cond: f64 },

    /// Model violates the stationarity requirement.
    #[error("model is not stable: spectral radius {rho:.6} is not below 1")]
    Unstable { rho: f64 },

    /// An iterative routine failed to converge.
    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    /// Failure while estimating a single row, annotated with the 1-based row.
    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    /// Malformed input text.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_row(self, row: usize) -> Self {
        match self {
            e @ Error::Row { .. } => e,
            e => Error::Row {
                row,
                source: Box::new(e),
            },
        }
    }

    /// True for rank, invertibility, stability and convergence failures,
    /// as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Rank | Error::NotInvertible { .. } | Error::Unstable { .. } | Error::NoConvergence(_) => {
                true
            }
            Error::Row { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
