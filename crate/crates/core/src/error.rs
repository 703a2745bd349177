use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, training or scene configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A query point lies outside the grid bounding box.
    #[error("point ({x}, {y}, {z}) is outside the grid bounding box")]
    OutOfDomain { x: f64, y: f64, z: f64 },

    /// An operation was called with arguments that violate its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Missing, corrupt or inconsistent dataset files.
    #[error("dataset error at {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    /// Malformed snapshot, mesh or config file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("numerical failure at iteration {iter}: {msg}")]
    Numerical { iter: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn out_of_domain(p: &crate::Vec3) -> Self {
        Error::OutOfDomain {
            x: p.x,
            y: p.y,
            z: p.z,
        }
    }
}
