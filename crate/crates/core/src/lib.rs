//! Sandpiles, waves and wired spanning forests on Galton-Watson trees.

pub mod error;
pub mod estimator;
pub mod gwtree;
pub mod isolab;
pub mod offspring;
pub mod resistance;
pub mod rng;
pub mod sandpile;
pub mod verify;
pub mod wsf;

pub use error::{Error, Result};
pub use gwtree::{NodeId, TreeArena, VertexSet, ROOT};
pub use offspring::{DecomposedLaw, OffspringDistribution};
pub use resistance::{conductance_to_infinity, resistance_to_sink, ConductanceInterval, ConductanceSolver, Horizon};
