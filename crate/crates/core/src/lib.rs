//! Core algorithms for diffusion-based in-bed human mesh recovery from
//! overhead depth images.
//!
//! The crate is `no_std` (with `alloc`) so that the numerical pieces can be
//! embedded anywhere; file formats, the command line and wall-clock logging
//! live in the `bedmesh` companion crate.
//!
//! Module map:
//!
//! * [`body_model`]: parameter vector packing, rotation decoding, shape
//!   blendshapes and linear blend skinning, plus a procedural toy template.
//! * [`diffusion`]: variance schedule, forward noising, x0-prediction
//!   posterior, ancestral and deterministic accelerated samplers.
//! * [`nn`]: a small CPU tensor engine with hand-written backward passes.
//! * [`network`]: the conditional denoiser with adaLN-Zero modulation.
//! * [`data`]: synthetic scene sampling, height-field rendering, blankets,
//!   the pseudo-real domain shift, augmentation and normalisation stats.
//! * [`train`]: losses, learning-rate schedule, AdamW and the two training
//!   stages.
//! * [`eval`]: MPJPE/PVE, inference and the sim-to-real experiment harness.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod body_model;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod network;
pub mod nn;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
