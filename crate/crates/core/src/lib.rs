//! Unsupervised online continual learning with a replay memory, many-view
//! contrastive training and domain-aware augmentations.

pub mod api;
pub mod augmentation;
pub mod contrastive;
pub mod datastream;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod image;
pub mod model;
pub mod replay_memory;
pub mod rng;
pub mod tensorfile;
pub mod trainer;

pub use error::{Error, Result};
