use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Conditioning on the current infection age is impossible: the age lies
    /// beyond the support of the infectious period.
    #[error("conditional law undefined at infection age {age}")]
    DegenerateAge { age: f64 },

    #[error("hazard undefined at x = {x}: survival is zero and there is no atom")]
    UndefinedHazard { x: f64 },

    #[error("mean infectious period is not finite")]
    InfiniteMean,

    #[error("rejection sampling gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("step too coarse at t = {time}: predictor/corrector disagree by {disagreement:e}")]
    StepTooCoarse { time: f64, disagreement: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (last change {change:e})")]
    NonConvergent { iterations: usize, change: f64 },

    #[error("horizon too short: {0}")]
    HorizonTooShort(String),

    #[error("need at least {needed} replications, got {got}")]
    InsufficientReplications { needed: usize, got: usize },

    #[error("distribution has atoms; the transport residual needs an absolutely continuous law")]
    NotAbsolutelyContinuous,

    #[error("distribution has no atoms")]
    NoAtoms,

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
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::ConfigInvalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
