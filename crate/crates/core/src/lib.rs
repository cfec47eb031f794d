pub mod error;
pub mod evaluation;
pub mod latent;
pub mod model;
pub mod nn;
pub mod patches;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
