//! Compression of stationary hidden Markov models into low-dimensional
//! samplers.
//!
//! The pipeline: dilate a branching HMM to a deterministic model on a
//! composite alphabet, take entrywise square roots to obtain a matrix
//! product state, truncate its bond dimension variationally, and read the
//! truncated tensors back as a quantum instrument whose statistics are
//! compared against the original under divergence-rate measures.

pub mod dilation;
pub mod divergence;
pub mod error;
pub mod generator;
pub mod hmm;
pub mod imps;
pub mod io;
pub mod linalg;
pub mod merge;
pub mod qhmm;
pub mod seeding;
pub mod train;
pub mod truncation;

pub use error::{Error, Result};
