//! Multiplane-image reconstruction by learned gradient descent.

pub mod compositor;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod gradients;
pub mod image;
pub mod io;
pub mod lgd;
pub mod metrics;
pub mod mpi;
pub mod network;
pub mod scene;
pub mod tiling;
pub mod training;

pub use error::{Error, Result};
