//! Particle approximations of McKean-Vlasov diffusions.
//!
//! The crate simulates N-particle systems with Euler-Maruyama, builds a reference
//! approximation of the limiting flow, couples the two synchronously through shared
//! keyed noise, and measures chaos rates, Wasserstein convergence, deviation tails and
//! relaxation to equilibrium.

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod model;
pub mod noise;
pub mod ot;
pub mod par;
pub mod plot;
pub mod runner;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
