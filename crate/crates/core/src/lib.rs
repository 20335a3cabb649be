//! Deterministic federated-learning simulation with even-round server-side
//! extrapolation ("upcycled" rounds), differential-privacy mechanisms with
//! closed-form accounting, and convergence diagnostics.

pub mod analysis;
pub mod data;
pub mod error;
pub mod fl;
pub mod harness;
pub mod models;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
