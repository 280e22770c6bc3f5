use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vertex {vertex} sits at the origin and cannot be projected onto the unit circle")]
    DegenerateProjection { vertex: usize },
    #[error("target is not strictly inside the convex hull of the neighbors of vertex {vertex}")]
    Infeasible { vertex: usize },
    #[error("mesh is not a topological disk: found {loops} boundary loops")]
    NotADisk { loops: usize },
    #[error("energy is not finite; gradient undefined")]
    GradientUndefined,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("internal invariant violated: {0}")]
    InternalInvariant(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
