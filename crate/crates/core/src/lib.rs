//! Diagnostics for the temporal dynamics of neural-network weight
//! checkpoints: density movies, displacement curves, bifurcation detection
//! with an early-stop verdict, covariance-rank probing and perplexity
//! evaluation, plus the SDE simulator and byte-level toy transformer that
//! produce ground-truth inputs for all of it.

pub mod detect;
pub mod error;
pub mod numeric;
pub mod probe;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
