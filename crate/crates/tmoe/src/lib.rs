//! Files, checkpoints, synthetic corpora and the command line around
//! `tmoe-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
