use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A deformation gradient left GL+(2).
    #[error("deformation gradient outside GL+(2): det F = {det}")]
    Domain { det: f64 },

    #[error("eikonal seed set is empty")]
    EmptySeed,

    #[error("speed {value} at node {node} outside [{min}, {max}]")]
    SpeedOutOfBounds {
        node: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("operation not defined in this interface regime: {0}")]
    WrongRegime(&'static str),

    #[error("field length {got} does not match grid ({expected})")]
    Shape { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
