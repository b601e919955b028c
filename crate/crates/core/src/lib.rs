//! Deep probabilistic kernel learning: Gaussian process regression and
//! softmax classification over ensembles of neural-network particles.

pub mod checkpoint;
pub mod classify;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod latentkernel;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod seeds;
pub mod trainer;

pub use error::{DpklError, Result};

/// Crate version plus the short git revision it was built from.
pub const BUILD_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("DPKL_GIT_REV"));
