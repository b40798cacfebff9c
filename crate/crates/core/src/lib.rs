//! Brownian bridges on the flat torus `T² = R²/Z²`.
//!
//! The crate simulates, with explicit Euler–Maruyama steps, a plane diffusion
//! whose projection onto the torus is conditioned to hit a target point `a`
//! at time `T`:
//!
//! * [`drift`] holds the argmin proposal drift, the exact lattice-softmax
//!   bridge drift and the wrapped Gaussian transition density;
//! * [`engine`] runs single paths, reproducible parallel batches and
//!   noise-coupled pairs;
//! * [`measure`] computes Girsanov log-weights and the drift bounds behind
//!   them;
//! * [`analysis`] summarizes batches (terminal convergence, limiting-lift
//!   histograms, coupled agreement, drift fields);
//! * [`cli`] and [`acceptance`] back the `torus-bridge` binary.

pub mod acceptance;
pub mod analysis;
pub mod cli;
pub mod drift;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod measure;

pub use drift::{DriftModel, DriftVariant};
pub use engine::{BatchResult, PathSample, SimConfig};
pub use error::{Error, Result};
pub use geometry::{EuclideanPoint, LatticeTarget, TorusPoint};
