//! Neural-network training with L2 regularization and DP-Adam, plus
//! membership-inference auditing of the trained models.

pub mod data;
pub mod error;
pub mod mia;
pub mod nn;
pub mod optim;
pub mod persist;
pub mod rng;
pub mod runner;
pub mod tensor;

pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::{LossKind, Model, ModelSpec};
pub use tensor::Tensor;
