//! Unsupervised pretraining of dialog context representations.
//!
//! The crate trains a hierarchical recurrent dialog encoder with four
//! self-supervised objectives (next-utterance retrieval and generation,
//! masked-utterance retrieval, inconsistency identification), transfers the
//! encoder into four downstream dialog tasks (belief state prediction,
//! dialog act prediction, retrieval, generation), and drives the experiment
//! protocols that compare the objectives: full-data, convergence,
//! limited-data, domain-generalization, and context-length analysis.
//!
//! Everything is built on a small reverse-mode autodiff core (`tape`) that
//! is verified by finite differences (`gradcheck`), so results are exactly
//! reproducible from a seed in 64-bit mode.
//!
//! See the `examples/` directory for runnable tours of each subsystem, or
//! the `dialog-pretrain` binary for the batch interface.

pub mod checkpoint;
pub mod data;
pub mod downstream;
pub mod objectives;
pub mod training;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
