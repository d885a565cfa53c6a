//! Core-periphery graph guided convolutional networks.
//!
//! The pipeline: generate a core-periphery (or Erdős–Rényi / Watts–Strogatz)
//! random graph, compile it into a directed acyclic computational graph per
//! network block, derive block-structured channel masks for every
//! convolution, and train the assembled network with a self-contained
//! reverse-mode tensor engine.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dag;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod mask;
pub mod model;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Seed;
