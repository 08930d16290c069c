//! Keyword-spotting robustness toolkit: interference augmentation at a
//! controlled signal-to-interference ratio, a hybrid DNN-HMM keyword spotter,
//! and DET-curve evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod augment;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod frontend;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
