//! Shared error type. Every fallible operation in the crate reports
//! through `Error` so callers (and the CLI) can map failures to exit
//! codes without string matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received a NaN/Inf where a finite
    /// value is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Dimension bookkeeping failed; the message names both sides.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A reference label lies outside the lattice's label dimension.
    #[error("label {label} outside label space of size {space}")]
    InvalidLabel { label: usize, space: usize },

    #[error("speaker inventory is empty")]
    EmptyInventory,

    #[error("speaker {0} not in inventory")]
    UnknownSpeaker(u32),

    /// A gradient was requested from occupancies that no longer match
    /// the lattice they were computed on.
    #[error("stale occupancy: lattice contents changed after loss evaluation")]
    StaleOccupancy,

    /// Brute-force enumeration refused an instance beyond its bound.
    #[error("alignment enumeration too large: {moves} moves exceeds bound {bound}")]
    TooLarge { moves: usize, bound: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Loss or gradient became non-finite during optimization. The
    /// training driver aborts and points at the last finite checkpoint.
    #[error("training diverged at {where_}: {what}")]
    Diverged { where_: String, what: String },

    /// The drawn source utterance cannot host the requested minimum
    /// onset delay; the caller should redraw.
    #[error("utterance of {len} frames shorter than minimum delay {min_delay}")]
    ResampleSource { len: usize, min_delay: usize },

    #[error("parse error in {file}: {what}")]
    Parse { file: String, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
