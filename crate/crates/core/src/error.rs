//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use crate::ingest::Variable;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("registry has no turbines")]
    EmptyRegistry,

    #[error("turbines {first} and {second} share coordinates ({latitude}, {longitude})")]
    DuplicateCoordinate {
        first: i64,
        second: i64,
        latitude: f64,
        longitude: f64,
    },

    #[error("turbine id {0} appears more than once in the registry")]
    DuplicateTurbineId(i64),

    #[error("unknown turbine id {0}")]
    UnknownTurbine(i64),

    #[error("timestamp {timestamp} is not on the lattice start={start}, period={period}")]
    IrregularSampling {
        start: i64,
        period: i64,
        timestamp: i64,
    },

    #[error("series needs at least two distinct timestamps, found {0}")]
    TooFewTimestamps(usize),

    #[error("duplicate reading for turbine {turbine} at timestamp {timestamp}")]
    DuplicateReading { turbine: i64, timestamp: i64 },

    #[error("turbine {turbine} starts with {len} missing readings; forward fill has nothing to copy")]
    LeadingGap { turbine: usize, len: usize },

    #[error("series contains {0} missing readings and the gap policy is `fail`")]
    GapPresent(usize),

    #[error("turbine {0} has no readings at all")]
    AllAbsent(usize),

    #[error("two turbines ({first}, {second}) map to grid cell ({row}, {col})")]
    CellCollision {
        first: usize,
        second: usize,
        row: usize,
        col: usize,
    },

    #[error("snapshot has no value for turbine {0}")]
    IncompleteSnapshot(usize),

    #[error("series of length {available} is too short; window and horizon need {required}")]
    InsufficientHistory { required: usize, available: usize },

    #[error("series do not share one timestamp lattice: {0}")]
    MisalignedSeries(String),

    #[error("variable {0} is constant over the training split and cannot be normalized")]
    DegenerateVariable(Variable),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("mask selects no cells")]
    EmptyMask,

    #[error("training diverged (non-finite loss); last finite epoch: {last_finite_epoch:?}")]
    Divergence { last_finite_epoch: Option<usize> },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("series is empty")]
    EmptySeries,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
