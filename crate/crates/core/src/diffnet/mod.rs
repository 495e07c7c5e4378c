//! Minimal differentiable-network substrate: dense modulated MLPs,
//! reverse-mode gradients, and an adaptive-moment optimizer.
//!
//! Everything trains in 64-bit arithmetic so finite-difference gradient
//! checks stay tight. Training loops are single-threaded; a frozen
//! [`ParamStore`] is plain data and can be shared read-only.

mod mlp;
mod optim;
mod params;
mod tape;

pub use mlp::ModulatedMlpSpec;
pub use optim::OptimizerState;
pub use params::{Param, ParamStore};
pub use tape::{sigmoid, Activation, NodeId, PatchLayout, Tape};
