//! The reconstruction network, its ablation variants and training loop.

mod config;
mod net;
mod recon;
mod train;

pub use config::{ModelConfig, Variant};
pub use net::{GraphInputs, GraphNetwork, LatentGraphState, LatentVars, NetworkDims};
pub use recon::{masked_mse, masked_mse_var, ReconModel};
pub use train::{eval_seeds, evaluate, train_reconstruction, train_reconstruction_with, EpochMetrics, TrainConfig};
