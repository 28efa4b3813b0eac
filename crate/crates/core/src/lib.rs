//! Learned sample weights and soft labels for upstream-augmented training data.
//!
//! Given a model at parameters θ, a training minibatch, an augmented minibatch
//! produced by any upstream augmenter, and a validation minibatch, the crate
//! picks per-sample weights `w ∈ [0, 1]` and soft labels `y ∈ Δ^K` for the
//! augmented samples so that a single SGD step on the combined batch reduces
//! the validation loss as much as possible to first order.
//!
//! The pieces:
//!
//! - [`nn`]: a small dense MLP engine with reverse-mode gradients and
//!   forward-mode Jacobian-vector products of the logits.
//! - [`losses`]: cross-entropy and contrastive losses that are linear in
//!   sample weights and soft labels.
//! - [`saflex`]: gradient-alignment scores, the assignment rule and the
//!   single training step.
//! - [`oracle`]: exhaustive vertex enumeration, finite differences and exact
//!   post-step validation loss, used to certify the closed-form rule.
//! - [`augment`], [`data`], [`trainer`], [`config`], [`cli`]: experiment
//!   plumbing around the core rule.

pub mod augment;
pub mod cli;
pub mod config;
pub mod data;
mod error;
pub mod losses;
pub mod matrix;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod saflex;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix2D;
