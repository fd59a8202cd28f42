//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A routed protocol exhausted its draw cap without making progress.
    #[error("no progress after {draws} draws (flagger never fires)")]
    NoProgress { draws: u64 },

    /// Not enough data to form the requested estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A moment constraint is not attainable on the support.
    #[error("infeasible moment {target}: attainable range is ({lo}, {hi})")]
    InfeasibleMoment { target: f64, lo: f64, hi: f64 },

    /// An uninformative flagger: no penalty weight can cancel the drift.
    #[error("no cancellation possible: flagger rates tau and phi coincide")]
    NoCancellation,

    /// A measure is missing a named attribute column.
    #[error("measure has no attribute `{0}`")]
    MissingAttribute(String),

    /// A constructed instance violates its structural precondition.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// Config or data file could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A result file is missing a required column.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
