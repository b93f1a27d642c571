//! Vision Transformer classification stack: tensors with reverse-mode
//! differentiation, ViT and CNN classifiers, losses and optimizer, a
//! manifest-driven image pipeline, multiclass evaluation statistics and the
//! experiment harness behind the `vitlab` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
