//! Simulation and asymptotic theory of first passage times in spatial
//! branching processes, with the network and fitting utilities used to
//! compare them against polymer-network shortest paths.

pub mod estimators;
pub mod fitting;
pub mod fpt;
pub mod model;
pub mod netgraph;
pub mod rng;
pub mod stats;
pub mod theory;

pub use fpt::{FptConfig, FptDistribution, FptError, FptSample};
pub use model::{ModelConfig, ModelError, ModelKind, Particle, Stage};
pub use rng::RngStream;
pub use stats::{histogram, Histogram, Moments};
pub use theory::{RateFunction, TheoryError};
