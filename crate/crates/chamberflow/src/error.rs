use thiserror::Error;

/// Error taxonomy for the whole crate. Variants carry enough context to
/// identify the offending input (node, root, facet) without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("geometry: {0}")]
    Geometry(String),

    /// Evaluation requested on or outside a chamber wall.
    #[error("wall: pairing <{root}, x> = {value:e} is within tolerance of a wall")]
    Wall { root: String, value: f64 },

    /// Monge-Ampere density lost positivity at a grid node.
    #[error("degenerate density at node {node_index} (x = {location:?}): {detail}")]
    Degeneracy {
        node_index: usize,
        location: Vec<f64>,
        detail: String,
    },

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
