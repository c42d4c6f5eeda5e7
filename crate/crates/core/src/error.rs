use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by the exit-code class reported by the command line
/// front end, see [`Error::class`] and [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("matrix is not Hurwitz (spectral abscissa {0:.6e} >= 0)")]
    UnstableMatrix(f64),

    #[error("Lyapunov solve failed: {0}")]
    SolveFailure(String),

    #[error("degenerate system: {0}")]
    DegenerateSystem(String),

    #[error("root bracket could not be established: {0}")]
    NoConvergence(String),

    #[error("trace(QP) = {0:.3e} is too small to normalize the gradient")]
    ZeroTrace(f64),

    #[error("no stable starting point: {0}")]
    NoStableStart(String),

    #[error("local system of agent {agent} is inconsistent (residual {residual:.3e})")]
    InconsistentLocal { agent: usize, residual: f64 },

    #[error("distributed solver did not converge after {rounds} rounds: {detail}")]
    NotConverged { rounds: usize, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Machine-parseable error class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Validation(_) | Error::Parse(_) => "ValidationError",
            Error::Dimension(_) => "DimensionError",
            Error::EigenFailure(_) => "EigenFailure",
            Error::UnstableMatrix(_) => "UnstableMatrix",
            Error::SolveFailure(_) => "SolveFailure",
            Error::DegenerateSystem(_) => "DegenerateSystem",
            Error::NoConvergence(_) => "NoConvergence",
            Error::ZeroTrace(_) => "ZeroTrace",
            Error::NoStableStart(_) => "NoStableStart",
            Error::InconsistentLocal { .. } => "InconsistentLocal",
            Error::NotConverged { .. } => "NotConverged",
            Error::Io { .. } => "IoError",
        }
    }

    /// Process exit code: 2 validation, 3 numerical failure, 4 not converged.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse(_) | Error::Io { .. } => 2,
            Error::NoConvergence(_) | Error::NotConverged { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
