//! Error type shared across the co-simulation crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(
        "history capacity {capacity} too small for delay {delay_steps} + window {history_len}"
    )]
    HistoryCapacity {
        capacity: usize,
        delay_steps: usize,
        history_len: usize,
    },

    #[error("history index {index} not available (written through {written})")]
    HistoryIndex { index: i64, written: i64 },

    #[error("plant/compensator wiring mismatch: {0}")]
    WiringMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("frequency-response oracle failed: {0}")]
    OracleFit(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
