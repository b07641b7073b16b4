//! Bandit training of attention-based encoder-decoder models.
//!
//! A translation model is pre-trained by maximum likelihood, then improved
//! online with an advantage actor-critic learner that only ever sees a
//! scalar rating for each sampled output. Ratings come from simulated
//! raters built on smoothed sentence-level BLEU with granularity, variance
//! and skew perturbations.

pub mod bandit;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod exec;
pub mod harness;
pub mod rater;
pub mod reward;
pub mod seq2seq;

pub use error::{Error, Result};
