use std::path::PathBuf;

use thiserror::Error;

use crate::lp::LpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("linear program is malformed: {0}")]
    MalformedLp(String),

    #[error("bound LP finished with status {0:?}; expected an optimal solution")]
    BoundNotOptimal(LpStatus),

    #[error("{op} requires hard delay D = 1, got D = {deadline}")]
    RequiresUnitDelay { op: &'static str, deadline: usize },

    #[error("group {group} (seed {seed}) failed: {source}")]
    GroupFailed {
        group: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
