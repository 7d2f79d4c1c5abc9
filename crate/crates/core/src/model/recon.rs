use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::net::{GraphInputs, GraphNetwork, LatentGraphState, NetworkDims};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{invalid, shape_err, Error, Result};
use crate::mesh::{MeshGraph, SensorMask, CHANNELS};

/// The reconstruction model: network architecture plus its weights.
#[derive(Clone, Debug)]
pub struct ReconModel {
    pub config: ModelConfig,
    pub net: GraphNetwork,
    pub params: ParamStore,
}

impl ReconModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let dims = NetworkDims {
            node_in: CHANNELS,
            mask_latent: Some(config.mask_latent_dim),
            edge_in: 4,
            latent: config.latent_dim,
            layers: config.num_layers,
            mlp_depth: config.mlp_depth,
            out: CHANNELS,
        };
        let net = GraphNetwork::new(&mut params, "recon", dims, config.variant, &mut rng)?;
        Ok(Self { config, net, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Records the full forward pass on `tape`; output is `n × 4`.
    pub fn forward(&self, tape: &mut Tape, masked: &MeshGraph) -> Result<Var> {
        self.forward_with(tape, &self.params, masked)
    }

    pub fn forward_with(&self, tape: &mut Tape, params: &ParamStore, masked: &MeshGraph) -> Result<Var> {
        let inputs = GraphInputs::for_reconstruction(masked);
        self.net.forward(tape, params, &inputs)
    }

    /// Predictions `[û, p̂]` for every node of a masked, normalised mesh.
    pub fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, masked)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode(&self, masked: &MeshGraph) -> Result<LatentGraphState> {
        let mut tape = Tape::new();
        let vars = self.net.encode(&mut tape, &self.params, &GraphInputs::for_reconstruction(masked))?;
        Ok(LatentGraphState::from_vars(&tape, vars))
    }

    pub fn process_layer(&self, layer: usize, masked: &MeshGraph, state: &LatentGraphState) -> Result<LatentGraphState> {
        if layer >= self.net.num_layers() {
            return invalid(format!("layer {layer} of {}", self.net.num_layers()));
        }
        let mut tape = Tape::new();
        let vars = state.to_vars(&mut tape)?;
        let out = self
            .net
            .process_layer(layer, &mut tape, &self.params, vars, &GraphInputs::for_reconstruction(masked))?;
        Ok(LatentGraphState::from_vars(&tape, out))
    }

    pub fn decode(&self, state: &LatentGraphState) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = state.to_vars(&mut tape)?;
        let out = self.net.decode(&mut tape, &self.params, vars)?;
        Ok(tape.value(out).clone())
    }

    /// Writes `<stem>.frp` and `<stem>.json` (the config).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        let f = std::fs::File::create(path.with_extension("json"))?;
        serde_json::to_writer_pretty(f, &self.config)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = std::fs::File::open(path.with_extension("json"))
            .map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.with_extension("json").display())))?;
        let config: ModelConfig = serde_json::from_reader(std::io::BufReader::new(cfg))?;
        let mut model = Self::new(config)?;
        let stored = ParamStore::load(path)?;
        model.params.load_values_from(&stored)?;
        Ok(model)
    }
}

/// Mean over unsensed nodes and all four channels of the squared error.
pub fn masked_mse(pred: &Tensor, truth: &[[f64; CHANNELS]], mask: &SensorMask) -> Result<f64> {
    if pred.rows() != truth.len() || pred.cols() != CHANNELS || mask.len() != truth.len() {
        return shape_err("masked_mse operands disagree in shape");
    }
    let targets: Vec<usize> = (0..truth.len()).filter(|&i| !mask.get(i)).collect();
    if targets.is_empty() {
        return invalid("masked_mse needs at least one unsensed node");
    }
    let mut acc = 0.0;
    for &i in &targets {
        for c in 0..CHANNELS {
            acc += (pred.get(i, c) - truth[i][c]).powi(2);
        }
    }
    Ok(acc / (targets.len() * CHANNELS) as f64)
}

/// Tape version of [`masked_mse`] for training.
pub fn masked_mse_var(tape: &mut Tape, pred: Var, truth: &MeshGraph, mask: &SensorMask) -> Result<Var> {
    let n = truth.node_count();
    let target = Rc::new(Tensor::matrix(n, CHANNELS, truth.field_matrix())?);
    tape.masked_mse(pred, target, Rc::from(mask.unsensed()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[[f64; 4]]) -> Vec<[f64; 4]> {
        v.to_vec()
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let truth = rows(&[[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]]);
        let pred = Tensor::matrix(2, 4, truth.iter().flatten().copied().collect()).unwrap();
        assert_eq!(masked_mse(&pred, &truth, &SensorMask::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn unit_offset_gives_unit_error() {
        let truth = rows(&[[1.0, 2.0, 3.0, 4.0], [0.5, -1.0, 0.0, 2.0]]);
        let pred = Tensor::matrix(2, 4, truth.iter().flatten().map(|v| v + 1.0).collect()).unwrap();
        assert_eq!(masked_mse(&pred, &truth, &SensorMask::zeros(2)).unwrap(), 1.0);
    }

    #[test]
    fn three_node_hand_case() {
        // node 1 is sensed and ignored; errors at nodes 0 and 2:
        // node 0: (1, 0, -2, 0.5) -> 1 + 0 + 4 + 0.25 = 5.25
        // node 2: (0, 3, 0, -1)   -> 0 + 9 + 0 + 1    = 10
        let truth = rows(&[[0.0; 4], [5.0; 4], [1.0; 4]]);
        let pred = Tensor::matrix(
            3,
            4,
            vec![1.0, 0.0, -2.0, 0.5, 100.0, 100.0, 100.0, 100.0, 1.0, 4.0, 1.0, 0.0],
        )
        .unwrap();
        let mask = SensorMask::new(vec![false, true, false]);
        let mse = masked_mse(&pred, &truth, &mask).unwrap();
        assert!((mse - 15.25 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn all_sensed_is_an_error() {
        let truth = rows(&[[0.0; 4]]);
        let pred = Tensor::zeros(&[1, 4]);
        assert!(masked_mse(&pred, &truth, &SensorMask::ones(1)).is_err());
    }
}
