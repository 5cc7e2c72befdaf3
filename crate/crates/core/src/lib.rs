//! Population synthesis with deep generative models.
//!
//! Trains WGAN-GP and VAE generators on multi-categorical records, optionally
//! regularized by the distance of generated rows to the training sample, and
//! scores generated populations for feasibility and diversity against a known
//! ground-truth population.

pub mod baselines;
pub mod data;
pub mod diffcore;
pub mod embedder;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod models;

pub use error::{Error, Result};
