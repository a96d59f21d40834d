//! Simulation and verification toolkit for small-noise scalar diffusions,
//! their random time changes, and the discrete autoregressions obtained by
//! Euler sampling.

pub mod clock;
pub mod error;
pub mod harness;
pub mod lamperti;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod path;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
