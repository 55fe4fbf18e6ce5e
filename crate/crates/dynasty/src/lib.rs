//! Multi-step, multi-dimensional node-attribute forecasting on dynamic
//! graphs.
//!
//! Each training sample carries its own sequence of adjacency matrices,
//! injected into spatial attention as a learned per-entry edge bias. An
//! encoder stack of edge-biased transformer layers feeds a GRU history
//! summarizer and an autoregressive GRU decoder; training combines a
//! horizon-weighted MAE with a variation penalty, masked reconstruction
//! pretraining, scheduled sampling, and a horizon curriculum.
//!
//! Crate layout:
//! - [`tensor`]: dense `f64` tensors with a recording tape and exact
//!   reverse-mode gradients, plus a finite-difference checker.
//! - [`model`]: the forecasting architecture and its parameters.
//! - [`training`]: losses, masking, schedules, Adam, and the
//!   pretrain/fine-tune loops.
//! - [`data`]: dataset generators and ingestors, normalization, splits,
//!   and the on-disk manifest+blob format.
//! - [`eval`]: metrics, model evaluation, the node-independent recurrent
//!   baseline, and the ablation suite.

pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{DynastyError, Result};
pub use tensor::{Tape, Tensor};
