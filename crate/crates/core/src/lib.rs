//! Task-aware mixture of attention experts for two-choice reading
//! comprehension.
//!
//! The crate is `no_std` and only needs `alloc`. It contains the numerical
//! core: a small reverse-mode autodiff tape, the featurizer that turns text
//! records into index/feature channels, the attention blocks, the three expert
//! streams (passage-question-choice, question-choice, passage-choice), the
//! confidence-weighted combiner and the training harness. File formats, the
//! checkpoint codec and the command line live in the `tmoe` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod experts;
pub mod features;
pub mod layers;
pub mod mixture;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, Primitive, Tape, Var};
pub use error::{Error, Result};
pub use experts::{ChannelFlags, StreamConfig, StreamKind, StreamParams};
pub use mixture::{
    combine_hard, combine_weighted, confidence_weight, Combined, MixtureMode, StreamPrediction,
};
pub use tensor::{ParamSet, Tensor};
