//! Online multiple object tracking in which position prediction and
//! identity association share one set of embeddings.
//!
//! Target and distractor attention refine a track's features before the
//! position search, an occlusion-gated weight decides how much refinement to
//! apply, and a convolutional GRU memory aggregates refined embeddings into a
//! per-identity reference that also drives re-identification of lost tracks.

pub mod attention;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gradsuite;
pub mod metrics;
pub mod memory;
pub mod motio;
pub mod sim;
pub mod tensor;
pub mod tracker;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
