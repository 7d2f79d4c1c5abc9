pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod mesh;
pub mod model;
pub mod placement;
pub mod subset;

pub use error::{Error, Result};
