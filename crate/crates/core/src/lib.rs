//! Recurrent equilibrium networks whose neurons carry `se(3)` twists and whose
//! weights are adjoint representations of rigid-body transforms.

pub mod cli;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod learning;
pub mod network;
pub mod projection;
pub mod sampling;

pub use error::{Error, Result};
