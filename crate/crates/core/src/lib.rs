//! Siamese constellation embeddings for binary keypoint descriptors.
//!
//! A constellation is a central keypoint plus its `k` nearest image-space
//! neighbours. The toolkit learns 48-dimensional embeddings of constellations
//! with a weight-shared (Siamese) network and a contrastive loss, and
//! evaluates them by nearest-neighbour precision and by the accuracy of
//! relative poses recovered from the resulting matches.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constellation;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
