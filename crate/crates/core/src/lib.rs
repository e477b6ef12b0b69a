pub mod augment;
pub mod autograd;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod losses;
pub mod masks;
pub mod model;
pub mod nn;
pub mod optim;
pub mod preview;
pub mod scalar;
pub mod segment;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Generator32 = model::Generator<f32>;
pub type Generator64 = model::Generator<f64>;
pub type Discriminator32 = model::Discriminator<f32>;
pub type Discriminator64 = model::Discriminator<f64>;
pub type Classifier32 = classifier::Classifier<f32>;
pub type Classifier64 = classifier::Classifier<f64>;
pub type Checkpoint32 = checkpoint::Checkpoint<f32>;
pub type Checkpoint64 = checkpoint::Checkpoint<f64>;
