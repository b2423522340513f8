use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("eigensolver did not converge ({0})")]
    NoConvergence(&'static str),

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("transfer amplitude {name} = {value} outside [0, 1]")]
    AmplitudeOutOfRange { name: &'static str, value: f64 },

    #[error("dense simulation limited to {max} sites, requested {requested}")]
    TooManySites { requested: usize, max: usize },

    #[error("channel ground state is degenerate (gap {gap:e} below {tolerance:e})")]
    DegenerateGroundState { gap: f64, tolerance: f64 },

    #[error("no parameter cell reached the quantum-advantage threshold")]
    NoAdvantageInFamily,

    #[error("cell exceeded its time budget of {0} s")]
    TimedOut(f64),

    #[error("invalid fit input: {0}")]
    InvalidFitInput(String),

    #[error("fit did not converge within {iterations} iterations (best rms {rms:e})")]
    FitNoConvergence {
        iterations: usize,
        rms: f64,
        best: Box<crate::fitting::FitResult>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
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
