use thiserror::Error;

use crate::gwtree::NodeId;

/// Errors surfaced by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("pgf evaluated at negative argument {0}")]
    NegativeArgument(f64),
    #[error("offspring law is not supercritical (mean {mean}); no survival decomposition")]
    NotSupercritical { mean: f64 },
    #[error("bush rooted at node {node} exceeded the cap of {cap} nodes")]
    BushCapExceeded { node: NodeId, cap: usize },
    #[error("node {0} is not developed; grow the tree first")]
    Undeveloped(NodeId),
    #[error("invalid vertex set: {0}")]
    InvalidVertexSet(String),
    #[error("configuration is not stable at vertex {0}")]
    Unstable(usize),
    #[error("configuration is not recurrent")]
    NotRecurrent,
    #[error("not a spanning tree of the wired graph: {0}")]
    NotSpanningTree(String),
    #[error("insufficient data for fit: {0}")]
    InsufficientData(String),
    #[error("subset enumeration refused: n_max {0} exceeds 18")]
    EnumerationTooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
