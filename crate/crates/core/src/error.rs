use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Model-loading variants carry a `path` naming the offending field, e.g.
/// `joints[3].axis` or `muscles[1].operating_range`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("cycle detected in body tree at `{path}`")]
    Cycle { path: String },
    #[error("dangling reference `{name}` at `{path}`")]
    DanglingReference { path: String, name: String },
    #[error("invariant violated at `{path}`: {message}")]
    Invariant { path: String, message: String },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error(
        "muscle `{muscle}` solves to a negative tendon length {tendon_length:.6} m; \
         widen the operating range R or check the length range"
    )]
    NegativeTendon { muscle: String, tendon_length: f64 },
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("site `{site}` lies inside wrap geometry `{geom}`")]
    SiteInsideWrap { site: String, geom: String },
    #[error("simulation diverged: {quantity} is not finite")]
    Diverged { quantity: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimization diverged: {0}")]
    Optimization(String),
    #[error("no complete stride found in contact sequence")]
    NoStride,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
