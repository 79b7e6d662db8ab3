use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has zero norm")]
    ZeroNorm,

    #[error("range must be positive, got {0}")]
    NonPositiveRange(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("no segment passed the chessboard filters")]
    BoardNotFound,

    #[error("intensity histogram has no peak on one side of the mean")]
    UnimodalIntensity,

    #[error("cost function returned a non-finite value")]
    NonFiniteCost,

    #[error("model fit rejected: mean per-point cost {mean_cost:.4} m exceeds {ceiling:.4} m")]
    FitRejected { mean_cost: f64, ceiling: f64 },

    #[error("bad image corners: {0}")]
    BadCorners(String),

    #[error("need at least {required} correspondences, got {got}")]
    InsufficientCorrespondences { required: usize, got: usize },

    #[error("optimization did not converge: {0}")]
    NoConvergence(String),

    #[error("no board point projects inside the detected corner grid")]
    NoPointsInside,

    #[error("no simulated ray hit the board")]
    EmptyScan,

    #[error("corner count mismatch: estimated {estimated}, truth {truth}")]
    CountMismatch { estimated: usize, truth: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// Stable taxonomy name, printed by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroNorm => "ZeroNorm",
            Error::NonPositiveRange(_) => "NonPositiveRange",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::BoardNotFound => "BoardNotFound",
            Error::UnimodalIntensity => "UnimodalIntensity",
            Error::NonFiniteCost => "NonFiniteCost",
            Error::FitRejected { .. } => "FitRejected",
            Error::BadCorners(_) => "BadCorners",
            Error::InsufficientCorrespondences { .. } => "InsufficientCorrespondences",
            Error::NoConvergence(_) => "NoConvergence",
            Error::NoPointsInside => "NoPointsInside",
            Error::EmptyScan => "EmptyScan",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Config(_) => "ConfigError",
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
