use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, ParamStore, Tape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::mesh::{MeshGraph, SensorMask, CHANNELS};
use crate::model::{GraphInputs, GraphNetwork, NetworkDims, Variant};
use crate::subset::{constrained_log_prob_grad, gumbel_topk_sample, InclusionProbs, LogProbMode, PROB_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub latent_dim: usize,
    pub num_layers: usize,
    pub mlp_depth: usize,
    /// Initial inclusion probability of every node.
    pub init_density: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            num_layers: 6,
            mlp_depth: 2,
            init_density: 0.10,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.num_layers == 0 || self.mlp_depth < 2 {
            return Err(Error::Config(
                "policy needs latent_dim >= 1, num_layers >= 1 and mlp_depth >= 2".into(),
            ));
        }
        if !(self.init_density > 0.0 && self.init_density < 1.0) {
            return Err(Error::Config("policy init_density must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn dims(&self) -> NetworkDims {
        NetworkDims {
            node_in: CHANNELS + 3,
            mask_latent: None,
            edge_in: 4,
            latent: self.latent_dim,
            layers: self.num_layers,
            mlp_depth: self.mlp_depth,
            out: 1,
        }
    }
}

/// How a mask's log-probability is scored: independent Bernoulli draws or
/// the law conditioned on `Σa = m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskLaw {
    Bernoulli,
    Constrained { m: usize, mode: LogProbMode },
}

/// Actor: per-node inclusion probabilities from the full field and positions.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub net: GraphNetwork,
    pub params: ParamStore,
}

impl PolicyNet {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let net = GraphNetwork::new(&mut params, "policy", config.dims(), Variant::Conventional, &mut rng)?;
        // every node starts at inclusion probability `init_density`
        let k = config.init_density;
        params.get_mut(net.decoder().output_weight()).value.fill(0.0);
        params.get_mut(net.decoder().output_bias()).value.fill((k / (1.0 - k)).ln());
        Ok(Self { config, net, params })
    }

    /// Node logits, `n × 1`.
    pub fn logits(&self, tape: &mut Tape, params: &ParamStore, mesh: &MeshGraph) -> Result<Var> {
        self.net.forward(tape, params, &GraphInputs::for_policy(mesh))
    }

    pub fn probs(&self, mesh: &MeshGraph) -> Result<InclusionProbs> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, &self.params, mesh)?;
        InclusionProbs::new(tape.value(z).data().iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn log_prob(&self, mesh: &MeshGraph, mask: &SensorMask, law: MaskLaw) -> Result<f64> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, &self.params, mesh)?;
        let lp = log_prob_var(&mut tape, z, mask, law)?;
        Ok(tape.value(lp).item())
    }

    /// Inference-time placement: `m` sensors by Gumbel top-k on the policy's
    /// probabilities.
    pub fn place(&self, mesh: &MeshGraph, m: usize, seed: u64) -> Result<SensorMask> {
        gumbel_topk_sample(&self.probs(mesh)?, m, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_with_config(&self.params, &self.config, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut p = Self::new(load_config(path)?)?;
        p.params.load_values_from(&ParamStore::load(path)?)?;
        Ok(p)
    }
}

fn save_with_config(params: &ParamStore, config: &PolicyConfig, path: &Path) -> Result<()> {
    params.save(path)?;
    let f = std::fs::File::create(path.with_extension("json"))?;
    serde_json::to_writer_pretty(f, config)?;
    Ok(())
}

fn load_config(path: &Path) -> Result<PolicyConfig> {
    let sidecar = path.with_extension("json");
    let f = std::fs::File::open(&sidecar).map_err(|e| Error::MissingArtifact(format!("{}: {e}", sidecar.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// `log π(a)` under `law` as a tape scalar of the logits `z`. Gradients flow
/// through `q = clamp(σ(z))`; clamped entries receive none.
pub fn log_prob_var(tape: &mut Tape, z: Var, mask: &SensorMask, law: MaskLaw) -> Result<Var> {
    let zs = tape.value(z).data().to_vec();
    if zs.len() != mask.len() {
        return invalid(format!("mask of length {} for {} logits", mask.len(), zs.len()));
    }
    let s: Vec<f64> = zs.iter().map(|&v| sigmoid(v)).collect();
    let q = InclusionProbs::new(s.clone())?;
    let (value, dq) = match law {
        MaskLaw::Bernoulli => (q.bernoulli_log_prob(mask)?, q.bernoulli_log_prob_grad(mask)?),
        MaskLaw::Constrained { m, mode } => constrained_log_prob_grad(mask, &q, m, mode)?,
    };
    let dz: Vec<f64> = s
        .iter()
        .zip(&dq)
        .map(|(&si, &g)| {
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&si) {
                0.0
            } else {
                g * si * (1.0 - si)
            }
        })
        .collect();
    tape.custom_scalar(z, value, Tensor::matrix(zs.len(), 1, dz)?)
}

/// Critic: mean over nodes of a per-node scalar head.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub config: PolicyConfig,
    pub net: GraphNetwork,
    pub params: ParamStore,
}

impl ValueNet {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x0c71_71c5);
        let mut params = ParamStore::new();
        let net = GraphNetwork::new(&mut params, "value", config.dims(), Variant::Conventional, &mut rng)?;
        Ok(Self { config, net, params })
    }

    pub fn value_var(&self, tape: &mut Tape, params: &ParamStore, mesh: &MeshGraph) -> Result<Var> {
        let out = self.net.forward(tape, params, &GraphInputs::for_policy(mesh))?;
        tape.mean(out)
    }

    pub fn value(&self, mesh: &MeshGraph) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.value_var(&mut tape, &self.params, mesh)?;
        Ok(tape.value(v).item())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_with_config(&self.params, &self.config, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut v = Self::new(load_config(path)?)?;
        v.params.load_values_from(&ParamStore::load(path)?)?;
        Ok(v)
    }
}
