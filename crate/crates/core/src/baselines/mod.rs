//! Interpolation and classical sensor-placement baselines.

mod basis;
mod interp;
mod placement;

pub use basis::{build_basis, SnapshotBasis};
pub use interp::{knn_impute, mean_impute, DEFAULT_KNN};
pub use placement::{
    d_optimal_objective, d_optimal_order, d_optimal_placement, qr_pivot_order, qr_pivot_placement, D_OPT_EPS,
};
