//! Shared error type for the toolkit.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DemError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Parse failure in a text input (grid, feature file, hydrograph, config).
    /// `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Params(String),

    #[error("point ({x}, {y}) outside grid extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("nodata in interpolation window at ({x}, {y})")]
    Nodata { x: f64, y: f64 },

    #[error("feature error: {0}")]
    Feature(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("simulation error: {0}")]
    Sim(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<DemError>,
    },
}

pub type Result<T> = std::result::Result<T, DemError>;

impl DemError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DemError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        DemError::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
