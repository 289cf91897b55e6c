//! Simulation and verification toolkit for the idle-first load balancing
//! class `Π(d₀, …, d_{b−1})` on `N` parallel unit-rate exponential queues in
//! the Halfin-Whitt regime `λ_N = N − β√N`.
//!
//! The crate is organised bottom-up:
//!
//! * [`ensemble`]: stack calculus on occupancy vectors (`Q_i` = number of
//!   servers with at least `i` tasks).
//! * [`policy`]: selection-size policies and the shared permutation draw.
//! * [`engine`]: coupled continuous-time simulation of several policies
//!   driven by one event stream, plus pathwise ordering checks.
//! * [`oracle`]: exact small-`N` Markov chain (generator, stationary law).
//! * [`diffusion`]: projected Euler–Maruyama integrator for the reflected
//!   two-dimensional limit process.
//! * [`stats`]: cross-policy and cross-scale studies.
//! * [`fuzz`]: randomized search over coupled rule steps.
//! * [`exec`]: replication fan-out, parallel with the `parallel` feature.

pub mod diffusion;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod fuzz;
pub mod oracle;
pub mod policy;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
