//! Co-simulation laboratory for constant-delay coupling faults.
//!
//! Two subsystem plants exchange sampled signals through a coupling channel
//! that injects a constant transport delay per direction. Signal-based
//! compensators (autoregressive extrapolators and small feedforward networks
//! with online retraining) predict the undelayed signal, and a frequency-domain
//! engine predicts closed-loop behavior of the whole arrangement analytically.

pub mod compensator;
pub mod coupling;
pub mod design;
pub mod error;
pub mod freq;
pub mod plants;

pub use error::{CoreError, Result};
