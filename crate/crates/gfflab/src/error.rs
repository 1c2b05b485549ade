use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty admissible set at site ({0}, {1})")]
    EmptyBand(i32, i32),

    #[error("degenerate spin at site ({0}, {1})")]
    DegenerateSpin(i32, i32),

    #[error("edges are not aligned on one lattice line with even separation")]
    MisalignedEdges,

    #[error("solver failed to converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed data: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
