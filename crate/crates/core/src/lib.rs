//! Fisher-information language-pair similarity and pseudo language family
//! selection.
//!
//! The pipeline: train a small shared encoder-decoder on every language
//! pair, estimate a diagonal empirical Fisher vector per pair, compare the
//! vectors (MSE, KL, or top-K mask overlap), and pick auxiliary pairs for a
//! target with a shrinking-gap greedy rule.

pub mod corpus;
pub mod datasim;
pub mod error;
pub mod family;
pub mod fim;
pub mod model;
pub mod pipeline;
pub mod similarity;
pub mod trainer;

pub use error::{Error, Result};
