//! Error type shared across the crate.

use std::fmt;

pub type Result<T> = std::result::Result<T, DustError>;

/// Errors surfaced by tensor ops, the network, I/O, and training.
#[derive(Debug)]
pub enum DustError {
    /// Tensor extents incompatible with an operation.
    Dim { op: &'static str, detail: String },
    /// Spatial geometry invalid (non-positive output extent, bad window, ...).
    Geometry { op: &'static str, detail: String },
    /// Invalid configuration value or combination.
    Config { detail: String },
    /// A forward pass or optimizer step produced or received a non-finite value.
    NonFinite { op: &'static str, detail: String },
    /// Violated calling contract (e.g. gradcheck closure not returning a scalar).
    Contract { detail: String },
    /// Filesystem / decode problems, tagged with the offending path.
    Io { path: String, detail: String },
    /// Checkpoint parse, checksum, or compatibility failure.
    Checkpoint { detail: String },
    /// A verification suite reported a failure.
    Verify { suite: String, detail: String },
}

impl fmt::Display for DustError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DustError::Dim { op, detail } => write!(f, "dimension error in {op}: {detail}"),
            DustError::Geometry { op, detail } => write!(f, "geometry error in {op}: {detail}"),
            DustError::Config { detail } => write!(f, "config error: {detail}"),
            DustError::NonFinite { op, detail } => {
                write!(f, "non-finite value in {op}: {detail}")
            }
            DustError::Contract { detail } => write!(f, "contract violation: {detail}"),
            DustError::Io { path, detail } => write!(f, "i/o error on {path}: {detail}"),
            DustError::Checkpoint { detail } => write!(f, "checkpoint error: {detail}"),
            DustError::Verify { suite, detail } => {
                write!(f, "verification failure in {suite}: {detail}")
            }
        }
    }
}

impl std::error::Error for DustError {}

impl DustError {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        DustError::Dim { op, detail: detail.into() }
    }

    pub fn geometry(op: &'static str, detail: impl Into<String>) -> Self {
        DustError::Geometry { op, detail: detail.into() }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        DustError::Config { detail: detail.into() }
    }

    pub fn io(path: impl Into<String>, detail: impl Into<String>) -> Self {
        DustError::Io { path: path.into(), detail: detail.into() }
    }
}
