//! Python bindings: meshes, masks, the constrained subset distribution,
//! reconstruction networks, classical placements and the placement policy.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sparseflow::baselines::{build_basis, d_optimal_order, knn_impute, qr_pivot_order};
use sparseflow::experiment::ExperimentConfig;
use sparseflow::mesh::{self, apply_mask, generate_mesh, synthesize_field, GeometrySpec, MaskStrategy, SensorMask};
use sparseflow::model::{self, masked_mse, ModelConfig, TrainConfig, Variant};
use sparseflow::placement::{PolicyConfig, PolicyNet};
use sparseflow::subset::{self, InclusionProbs, LogProbMode};
use sparseflow::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(m) | Error::Shape(m) | Error::Config(m) => PyValueError::new_err(m),
        Error::MissingArtifact(m) => PyFileNotFoundError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn probs(q: Vec<f64>) -> PyResult<InclusionProbs> {
    InclusionProbs::new(q).map_err(err)
}

fn strategy(name: &str) -> PyResult<MaskStrategy> {
    match name {
        "uniform" => Ok(MaskStrategy::Uniform),
        "random" => Ok(MaskStrategy::Random),
        other => Err(PyValueError::new_err(format!("unknown strategy {other}"))),
    }
}

fn log_prob_mode(name: &str) -> PyResult<LogProbMode> {
    match name {
        "saddlepoint" => Ok(LogProbMode::Saddlepoint),
        "exact_dp" | "dp" => Ok(LogProbMode::ExactDp),
        other => Err(PyValueError::new_err(format!("unknown log-prob mode {other}"))),
    }
}

/// A mesh snapshot with node fields (velocity, pressure) and a sensor mask.
#[pyclass(name = "Mesh", module = "sparseflow_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: mesh::MeshGraph,
}

#[pymethods]
impl PyMesh {
    /// Sphere mesh carrying the analytic field at time `t`.
    #[staticmethod]
    #[pyo3(signature = (node_count, knn_degree=6, seed=0, t=0.0, noise_scale=0.0))]
    fn sphere(node_count: usize, knn_degree: usize, seed: u64, t: f64, noise_scale: f64) -> PyResult<Self> {
        let geometry = generate_mesh(&GeometrySpec::sphere(1.0, node_count, knn_degree, seed)).map_err(err)?;
        Ok(Self {
            inner: synthesize_field(&geometry, t, seed, noise_scale),
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        self.inner.positions.clone()
    }

    #[getter]
    fn edges(&self) -> Vec<[usize; 2]> {
        self.inner.edges.clone()
    }

    /// Rows of `(u, v, w, p)`.
    fn field(&self) -> Vec<[f64; 4]> {
        self.inner.field_rows()
    }

    #[getter]
    fn sensors(&self) -> Vec<usize> {
        (0..self.inner.node_count()).filter(|&i| self.inner.mask[i] != 0).collect()
    }

    /// Copy with only `sensors` observed; other nodes get placeholder noise.
    #[pyo3(signature = (sensors, fill_seed=0))]
    fn masked(&self, sensors: Vec<usize>, fill_seed: u64) -> PyResult<Self> {
        let mask = SensorMask::from_indices(self.inner.node_count(), &sensors).map_err(err)?;
        Ok(Self {
            inner: apply_mask(&self.inner, &mask, fill_seed).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Mesh(nodes={}, edges={})", self.inner.node_count(), self.inner.edge_count())
    }
}

#[pyfunction]
fn sensor_count(n: usize, density: f64) -> PyResult<usize> {
    mesh::sensor_count(n, density).map_err(err)
}

/// Sensor indices at `density` by farthest-point (`uniform`) or random choice.
#[pyfunction]
#[pyo3(signature = (mesh, density, strategy="uniform", seed=0))]
fn make_mask(mesh: &PyMesh, density: f64, strategy: &str, seed: u64) -> PyResult<Vec<usize>> {
    let s = self::strategy(strategy)?;
    Ok(mesh::make_mask(&mesh.inner, density, s, seed).map_err(err)?.indices())
}

#[pyfunction]
fn dp_exact_log_prob(q: Vec<f64>, m: usize) -> PyResult<f64> {
    subset::dp_exact_log_prob(&probs(q)?, m).map_err(err)
}

#[pyfunction]
fn saddlepoint_log_prob(q: Vec<f64>, m: usize) -> PyResult<f64> {
    subset::saddlepoint_log_prob(&probs(q)?, m).map_err(err)
}

#[pyfunction]
fn dp_conditional_marginals(q: Vec<f64>, m: usize) -> PyResult<Vec<f64>> {
    subset::dp_conditional_marginals(&probs(q)?, m).map_err(err)
}

/// `log π(a | Σa = m)` for the mask with ones at `sensors`.
#[pyfunction]
#[pyo3(signature = (sensors, q, m, mode="saddlepoint"))]
fn constrained_log_prob(sensors: Vec<usize>, q: Vec<f64>, m: usize, mode: &str) -> PyResult<f64> {
    let q = probs(q)?;
    let a = SensorMask::from_indices(q.len(), &sensors).map_err(err)?;
    subset::constrained_log_prob(&a, &q, m, log_prob_mode(mode)?).map_err(err)
}

#[pyfunction]
fn dp_exact_sample(q: Vec<f64>, m: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(subset::dp_exact_sample(&probs(q)?, m, seed).map_err(err)?.indices())
}

#[pyfunction]
fn gumbel_topk_sample(q: Vec<f64>, m: usize, seed: u64) -> PyResult<Vec<usize>> {
    Ok(subset::gumbel_topk_sample(&probs(q)?, m, seed).map_err(err)?.indices())
}

#[pyfunction]
fn penalized_reward(reward: f64, sensors: Vec<usize>, n: usize, m: usize, lam: f64) -> PyResult<f64> {
    let a = SensorMask::from_indices(n, &sensors).map_err(err)?;
    Ok(subset::penalized_reward(reward, &a, m, lam))
}

/// Greedy QR-pivoting sensor order from a rank-`rank` snapshot basis.
#[pyfunction]
fn qr_pivot_placement(snapshots: Vec<PyRef<PyMesh>>, m: usize, rank: usize) -> PyResult<Vec<usize>> {
    let snaps: Vec<mesh::MeshGraph> = snapshots.iter().map(|s| s.inner.clone()).collect();
    let basis = build_basis(&snaps, rank).map_err(err)?;
    qr_pivot_order(&basis, m).map_err(err)
}

/// Greedy D-optimal sensor order and the objective after each step.
#[pyfunction]
fn d_optimal_placement(snapshots: Vec<PyRef<PyMesh>>, m: usize, rank: usize) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let snaps: Vec<mesh::MeshGraph> = snapshots.iter().map(|s| s.inner.clone()).collect();
    let basis = build_basis(&snaps, rank).map_err(err)?;
    d_optimal_order(&basis, m).map_err(err)
}

/// Inverse-distance interpolation of the sensed nodes of a masked mesh.
#[pyfunction]
#[pyo3(signature = (masked, k=4))]
fn knn_interpolate(masked: &PyMesh, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let t = knn_impute(&masked.inner, k).map_err(err)?;
    Ok(t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect())
}

/// Graph network that reconstructs full fields from sparse sensors.
#[pyclass(name = "ReconModel", module = "sparseflow_py")]
struct PyReconModel {
    inner: model::ReconModel,
}

#[pymethods]
impl PyReconModel {
    #[new]
    #[pyo3(signature = (variant="DTA", latent_dim=32, mask_latent_dim=8, num_layers=3, mlp_depth=2, seed=0))]
    fn new(
        variant: &str,
        latent_dim: usize,
        mask_latent_dim: usize,
        num_layers: usize,
        mlp_depth: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(err)?;
        let cfg = ModelConfig {
            latent_dim,
            mask_latent_dim,
            num_layers,
            mlp_depth,
            variant,
            seed,
        };
        Ok(Self {
            inner: model::ReconModel::new(cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::ReconModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.config.variant.to_string()
    }

    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    /// Trains on (normalised) snapshots; returns the per-epoch training MSE.
    #[pyo3(signature = (snapshots, epochs=10, batch_size=4, lr_start=3e-3, lr_end=3e-4, seed=0))]
    fn train(
        &mut self,
        snapshots: Vec<PyRef<PyMesh>>,
        epochs: usize,
        batch_size: usize,
        lr_start: f64,
        lr_end: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let snaps: Vec<mesh::MeshGraph> = snapshots.iter().map(|s| s.inner.clone()).collect();
        let cfg = TrainConfig {
            epochs,
            batch_size,
            lr_start,
            lr_end,
            seed,
            ..Default::default()
        };
        let history = model::train_reconstruction(&mut self.inner, &snaps, &[], &cfg).map_err(err)?;
        Ok(history.iter().map(|m| m.train_mse).collect())
    }

    /// Predicted `(u, v, w, p)` rows for a masked mesh.
    fn reconstruct(&self, masked: &PyMesh) -> PyResult<Vec<Vec<f64>>> {
        let t = self.inner.reconstruct(&masked.inner).map_err(err)?;
        Ok(t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect())
    }

    /// MSE over the unsensed nodes of `truth` when observing `sensors`.
    #[pyo3(signature = (truth, sensors, fill_seed=0))]
    fn masked_mse(&self, truth: &PyMesh, sensors: Vec<usize>, fill_seed: u64) -> PyResult<f64> {
        let mask = SensorMask::from_indices(truth.inner.node_count(), &sensors).map_err(err)?;
        let masked = apply_mask(&truth.inner, &mask, fill_seed).map_err(err)?;
        let pred = self.inner.reconstruct(&masked).map_err(err)?;
        masked_mse(&pred, &truth.inner.field_rows(), &mask).map_err(err)
    }
}

/// Per-node inclusion-probability network for sensor placement.
#[pyclass(name = "PolicyNet", module = "sparseflow_py")]
struct PyPolicyNet {
    inner: PolicyNet,
}

#[pymethods]
impl PyPolicyNet {
    #[new]
    #[pyo3(signature = (latent_dim=32, num_layers=3, mlp_depth=2, init_density=0.1, seed=0))]
    fn new(latent_dim: usize, num_layers: usize, mlp_depth: usize, init_density: f64, seed: u64) -> PyResult<Self> {
        let cfg = PolicyConfig {
            latent_dim,
            num_layers,
            mlp_depth,
            init_density,
            seed,
        };
        Ok(Self {
            inner: PolicyNet::new(cfg).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyNet::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn probs(&self, mesh: &PyMesh) -> PyResult<Vec<f64>> {
        Ok(self.inner.probs(&mesh.inner).map_err(err)?.as_slice().to_vec())
    }

    /// Exactly `m` sensor indices drawn from the policy.
    fn place(&self, mesh: &PyMesh, m: usize, seed: u64) -> PyResult<Vec<usize>> {
        Ok(self.inner.place(&mesh.inner, m, seed).map_err(err)?.indices())
    }
}

/// The built-in experiment configuration as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_toml().map_err(err)
}

#[pymodule]
fn sparseflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyReconModel>()?;
    m.add_class::<PyPolicyNet>()?;
    m.add_function(wrap_pyfunction!(sensor_count, m)?)?;
    m.add_function(wrap_pyfunction!(make_mask, m)?)?;
    m.add_function(wrap_pyfunction!(dp_exact_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(saddlepoint_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(dp_conditional_marginals, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(dp_exact_sample, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_topk_sample, m)?)?;
    m.add_function(wrap_pyfunction!(penalized_reward, m)?)?;
    m.add_function(wrap_pyfunction!(qr_pivot_placement, m)?)?;
    m.add_function(wrap_pyfunction!(d_optimal_placement, m)?)?;
    m.add_function(wrap_pyfunction!(knn_interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
