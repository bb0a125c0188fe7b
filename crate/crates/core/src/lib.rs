//! Simulation and verification toolkit for one-dimensional O(N) spin chains
//! under Langevin dynamics.

pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod lanczos;
pub mod model;
pub mod numerics;
pub mod observables;
pub mod paths;
pub mod record;
pub mod rng;
pub mod sampling;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{BoundaryCondition, SpinChain};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
