//! Network bending: deterministic transform layers inserted into a
//! convolutional generator, and unsupervised grouping of its features by
//! clustering learned embeddings of their activation maps.

pub mod bendconfig;
pub mod clustering;
pub mod error;
pub mod generator;
pub mod gradcheck;
pub mod metriclearn;
pub mod nbt;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::Tensor;
