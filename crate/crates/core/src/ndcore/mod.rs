//! Dense-array mathematics with reverse-mode differentiation.
//!
//! Everything here is sized for small fixed networks: arrays are row-major
//! `f64` buffers, the tape is an append-only list of fused primitives, and
//! gradients are dense.

mod adam;
mod array;
mod rng;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use array::Array;
pub use rng::Rng;
pub use tape::{AttentionVars, Gradients, Tape, Var};
pub(crate) use tape::gaussian_log_density;

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
