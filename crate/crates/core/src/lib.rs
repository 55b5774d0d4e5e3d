//! Graph transformer variational autoencoder for link prediction.

pub mod analysis;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
