//! Simulation engine for Markovian open quantum systems built around an
//! adaptively resummed expansion in quantum-jump events.
//!
//! The crate provides:
//! - a model layer for Lindblad generators with dense or spatially
//!   diagonal structure ([`model`], [`models`]),
//! - a direct master-equation integrator used as the reference
//!   ([`propagator`]),
//! - the jump expansion itself with several resummation strategies
//!   ([`expansion`]),
//! - Monte Carlo evaluation of the jump-time multi-integrals
//!   ([`montecarlo`]),
//! - convergence diagnostics against the reference ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod expansion;
pub mod linalg;
pub mod model;
pub mod models;
pub mod montecarlo;
pub mod propagator;

pub use error::{Error, Result};
pub use linalg::{CMat, CVec};
