//! Flow-matching engine for periodic 3D+t four-chamber cardiac shape
//! generation, completion, and evaluation on procedural phantoms.
//!
//! The crate is organized around three pipelines:
//! - latent rectified flow over autoencoder latents for shape augmentation
//!   ([`autoenc`], [`fm`]);
//! - sparse multi-view label completion trained on real/synthetic mixes
//!   ([`phantom`], [`completion`]);
//! - one-step periodic 3D+t generation conditioned on periodic Gaussian
//!   kernel frame encodings ([`cardiacflow`]).
//!
//! [`metrics`] carries the evaluation suite (DSC, HD95, cycle-DSC, vFID,
//! paired t-test) and [`diffnet`] the differentiable substrate everything
//! trains through.

pub mod autoenc;
pub mod cardiacflow;
pub mod checkpoint;
pub mod completion;
pub mod diffnet;
pub mod error;
pub mod fm;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod testing;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use grid::{LabelGrid, ShapeSequence, NUM_CLASSES, UNKNOWN_CLASS};
