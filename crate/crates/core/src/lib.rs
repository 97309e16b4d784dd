//! Adversarial multi-channel sign pose production.
//!
//! A progressive transformer generator maps source token sequences to
//! continuous pose trajectories with a counter channel that predicts sequence
//! progress. A source-conditioned 1D convolutional discriminator scores
//! (source, pose) pairs, and the two are trained jointly with a weighted
//! regression + adversarial loss. Back-translation metrics (BLEU, ROUGE-L)
//! over a deterministic primitive-matching decoder evaluate the output.
//!
//! The crate is `no_std` (with `alloc`); file formats, checkpoints and the
//! command-line driver live in the `spgan` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pose;
pub mod synth;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use graph::{Grads, Graph, Var};
pub use params::{adam_step, xavier_init, AdamState, Bound, ParamId, ParameterStore};
pub use tensor::Tensor;
