use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no IMU samples in span")]
    EmptyImuSpan,
    #[error("IMU timestamps not strictly increasing at sample {index}")]
    NonMonotoneImu { index: usize },
    #[error("degenerate patch: normal matrix is rank deficient")]
    DegeneratePatch,
    #[error("covariance is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("unobservable bias: no keyframe pair with enough non-degenerate correspondences")]
    UnobservableBias,
    #[error("unobservable scale/gravity: linear system is rank deficient (rank {rank} of {cols})")]
    UnobservableScaleGravity { rank: usize, cols: usize },
    #[error("recovered scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("refinement unobservable: stacked triple system has rank {rank} < 3")]
    RefinementUnobservable { rank: usize },
    #[error("not enough keyframes: need at least {needed}, got {got}")]
    TooFewKeyframes { needed: usize, got: usize },
    #[error("degenerate point set for alignment")]
    DegenerateAlignment,
    #[error("bad scenario: {0}")]
    BadScenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }
}
