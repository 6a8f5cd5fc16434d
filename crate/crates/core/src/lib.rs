//! Small encoder-decoder segmentation networks whose activation layers are
//! drawn from a pool of parametric functions, trained independently and fused
//! by averaging their softmax outputs.

pub mod activation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{GradMap, Scalar, Shape, Tensor};
