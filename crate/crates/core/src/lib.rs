pub mod autograd;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tensor;

pub use autograd::{Graph, Selections, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
pub mod features;
mod container;
pub mod mpp;
pub mod alignment;
pub mod eval;
pub mod model;
pub mod training;

pub use model::{HvpModel, ModelConfig, Toggles};
