use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("containment violated: {0}")]
    Containment(String),

    #[error("volume has no set voxels")]
    EmptyVolume,

    #[error("set voxels touch the grid boundary; pad the volume before extraction")]
    TouchesBoundary,

    #[error("mesh is not watertight ({boundary_edges} boundary edges, {nonmanifold_edges} non-manifold edges)")]
    NotWatertight {
        boundary_edges: usize,
        nonmanifold_edges: usize,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: &'static str,
        expected: String,
        got: String,
    },

    #[error("{0}: backward called without a matching forward pass")]
    BackwardWithoutForward(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
