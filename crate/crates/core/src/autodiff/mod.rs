//! Reverse-mode differentiation over dense rank-2 tensors.

mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub mod gradcheck;

pub use nn::Mlp;
pub use optim::{cosine_lr, Adam};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use params::read_u32;
