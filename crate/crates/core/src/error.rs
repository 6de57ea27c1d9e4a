use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("empty panel: all {total} reference points fall outside the series bounds")]
    EmptyPanel { total: usize },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("insufficient history at t = {t}: order {p} needs t >= {p}")]
    InsufficientHistory { t: usize, p: usize },

    #[error("singular lagged covariance at t = {t}, p = {p}")]
    SingularLaggedCovariance { t: usize, p: usize },

    #[error("degenerate residual covariance at t = {t}, p = {p}")]
    DegenerateResidualCovariance { t: usize, p: usize },

    #[error("non-finite log-determinant at t = {t}")]
    NonFiniteLogDet { t: usize },

    #[error("fit failed for order p = {p}: {source}")]
    OrderFit {
        p: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unstable process: companion spectral radius {radius:.6} >= 1")]
    UnstableProcess { radius: f64 },

    #[error("zero-variance trace: threshold undefined")]
    ZeroVariance,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        completed: Vec<PathBuf>,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure classes, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Io => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Io => "io",
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::SingularLaggedCovariance { .. }
            | Error::DegenerateResidualCovariance { .. }
            | Error::NonFiniteLogDet { .. }
            | Error::UnstableProcess { .. }
            | Error::ZeroVariance => ErrorKind::Numerical,
            Error::OrderFit { source, .. } | Error::Stage { source, .. } => source.kind(),
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::InvalidSeries(_)
            | Error::EmptyPanel { .. }
            | Error::InvalidPanel(_)
            | Error::InsufficientHistory { .. }
            | Error::Config(_) => ErrorKind::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
