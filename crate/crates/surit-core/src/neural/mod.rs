//! Minimal neural toolkit: a dense f64 tensor, the handful of layers
//! the model needs with hand-written backward passes, deterministic
//! initialization, a moment-based optimizer, and checkpoint files.

pub mod ops;
pub mod optim;
pub mod params;
pub mod tensor;
