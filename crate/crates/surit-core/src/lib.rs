//! Two-speaker streaming speech recognition and speaker identification,
//! built from scratch on exact alignment-lattice losses.
//!
//! The pipeline: a mixture feature matrix is split by a learned masking
//! front-end into two stream encodings, each stream is scored by a
//! recurrent transducer (token head) and a Bernoulli-factored transducer
//! (speaker head), and both heads are trained end-to-end from the exact
//! log-marginal over monotone alignment lattices. Latency shaping is
//! available through blank-gradient scaling and a late-emission penalty.
//!
//! Everything is 64-bit floats with hand-written backward passes; the
//! `oracle` module provides brute-force path enumeration and central
//! finite differences to verify all of it.

pub mod data;
pub mod decode;
pub mod error;
pub mod lattice;
pub mod metrics;
pub mod model;
pub mod neural;
pub mod oracle;

pub use data::{DataConfig, Dataset, MixtureSample, Split, SyntheticSpeaker};
pub use decode::{
    greedy_decode_asr, greedy_decode_sid, latency_stats, DecodeEvent, EventKind, LatencyStats,
    MAX_SYMBOLS_PER_FRAME,
};
pub use error::Error;
pub use lattice::{AlignmentLattice, LatencyConfig, LatticeGrad, LatticeMode, NodeLogits, Occupancy};
pub use metrics::{edit_distance, evaluate, permutation_wer, ser, EvalReport, SpeakerLabels, UttEval};
pub use model::{
    sample_loss_and_grad, separate_streams, train, LossBreakdown, LossConfig, LossMode,
    SpeakerInventory, TrainConfig, TrainLogRow, TrainMode,
};
pub use neural::optim::OptimConfig;
pub use neural::params::{Architecture, ModelParams};
pub use neural::tensor::Tensor;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
