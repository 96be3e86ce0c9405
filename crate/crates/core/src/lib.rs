//! Neural-network compression by soft weight-sharing.
//!
//! A pre-trained dense classifier is retrained under a learnable
//! mixture-of-Gaussians prior over its weights. Afterwards redundant mixture
//! components are merged, every weight is snapped to the mean of its most
//! responsible component, and the result is written in a sparse, entropy-coded
//! storage format.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
mod le;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod postprocess;
pub mod prior;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
