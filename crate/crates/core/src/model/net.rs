use std::rc::Rc;

use rand::Rng;

use super::config::Variant;
use crate::autodiff::{Mlp, ParamStore, Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::mesh::{MeshGraph, CHANNELS};

/// Dense inputs of one graph: node features, optional mask bits and edges.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub node_features: Tensor,
    pub mask: Option<Tensor>,
    pub edge_attr: Tensor,
    /// First endpoint `i` of every edge; messages aggregate here.
    pub senders: Rc<[usize]>,
    /// Second endpoint `j` of every edge.
    pub receivers: Rc<[usize]>,
}

impl GraphInputs {
    /// `[u, p]` node features plus the mask channel of a masked mesh.
    pub fn for_reconstruction(mesh: &MeshGraph) -> Self {
        let n = mesh.node_count();
        let mask = Tensor::column(mesh.mask.iter().map(|&a| a as f64).collect());
        Self {
            node_features: Tensor::matrix(n, CHANNELS, mesh.field_matrix()).unwrap(),
            mask: Some(mask),
            ..Self::edges_of(mesh)
        }
    }

    /// `[u, p, x]` node features without a mask channel.
    pub fn for_policy(mesh: &MeshGraph) -> Self {
        let n = mesh.node_count();
        let data = mesh
            .field_rows()
            .iter()
            .zip(&mesh.positions)
            .flat_map(|(f, x)| f.iter().chain(x.iter()).copied().collect::<Vec<_>>())
            .collect();
        Self {
            node_features: Tensor::matrix(n, CHANNELS + 3, data).unwrap(),
            mask: None,
            ..Self::edges_of(mesh)
        }
    }

    fn edges_of(mesh: &MeshGraph) -> Self {
        let e = mesh.edge_count();
        Self {
            node_features: Tensor::zeros(&[0, 0]),
            mask: None,
            edge_attr: Tensor::matrix(e, 4, mesh.edge_attr.iter().flatten().copied().collect()).unwrap(),
            senders: mesh.edges.iter().map(|e| e[0]).collect(),
            receivers: mesh.edges.iter().map(|e| e[1]).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }
}

/// Transport-MLP input for every edge. `alignment` overrides the inner
/// product score `d_ij` when given.
pub(crate) fn message_input(
    variant: Variant,
    tape: &mut Tape,
    vi: Var,
    vj: Var,
    edges: Var,
    alignment: Option<Var>,
) -> Result<Var> {
    let score = |tape: &mut Tape| match alignment {
        Some(d) => Ok(d),
        None => {
            let width = tape.value(vi).cols() as f64;
            let dot = tape.row_dot(vi, edges)?;
            tape.scale(dot, 1.0 / width)
        }
    };
    match variant {
        Variant::Dta => {
            let d = score(tape)?;
            let diff = tape.sub(vj, vi)?;
            tape.scale_rows(diff, d)
        }
        Variant::AblD => tape.sub(vj, vi),
        Variant::AblDiff => {
            let d = score(tape)?;
            let cat = tape.concat(&[vi, vj])?;
            tape.scale_rows(cat, d)
        }
        Variant::Conventional => tape.concat(&[vi, vj, edges]),
    }
}

/// Node and edge latents living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub nodes: Var,
    pub edges: Var,
}

/// Materialised latent state of one processor depth.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGraphState {
    pub node_latents: Tensor,
    pub edge_latents: Tensor,
}

impl LatentGraphState {
    pub fn from_vars(tape: &Tape, vars: LatentVars) -> Self {
        Self {
            node_latents: tape.value(vars.nodes).clone(),
            edge_latents: tape.value(vars.edges).clone(),
        }
    }

    pub fn to_vars(&self, tape: &mut Tape) -> Result<LatentVars> {
        Ok(LatentVars {
            nodes: tape.leaf(self.node_latents.clone())?,
            edges: tape.leaf(self.edge_latents.clone())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkDims {
    pub node_in: usize,
    /// Mask embedding width; `None` builds a network without a mask encoder.
    pub mask_latent: Option<usize>,
    pub edge_in: usize,
    pub latent: usize,
    pub layers: usize,
    pub mlp_depth: usize,
    pub out: usize,
}

#[derive(Clone, Debug)]
struct ProcessorLayer {
    transport: Mlp,
    aggregate: Mlp,
}

/// Encoder / processor / decoder over a mesh graph.
#[derive(Clone, Debug)]
pub struct GraphNetwork {
    mask_encoder: Option<Mlp>,
    node_encoder: Mlp,
    edge_encoder: Mlp,
    layers: Vec<ProcessorLayer>,
    decoder: Mlp,
    variant: Variant,
    dims: NetworkDims,
}

impl GraphNetwork {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dims: NetworkDims,
        variant: Variant,
        rng: &mut R,
    ) -> Result<Self> {
        let d = dims.latent;
        let depth = dims.mlp_depth;
        let mask_encoder = match dims.mask_latent {
            Some(k) => Some(Mlp::new(store, &format!("{prefix}.enc_mask"), &Mlp::layer_sizes(1, k, k, depth), rng)?),
            None => None,
        };
        let node_in = dims.node_in + dims.mask_latent.unwrap_or(0);
        let node_encoder = Mlp::new(store, &format!("{prefix}.enc_node"), &Mlp::layer_sizes(node_in, d, d, depth), rng)?;
        let edge_encoder = Mlp::new(
            store,
            &format!("{prefix}.enc_edge"),
            &Mlp::layer_sizes(dims.edge_in, d, d, depth),
            rng,
        )?;
        let layers = (0..dims.layers)
            .map(|l| {
                Ok(ProcessorLayer {
                    transport: Mlp::new(
                        store,
                        &format!("{prefix}.proc{l}.transport"),
                        &Mlp::layer_sizes(variant.transport_input(d), d, d, depth),
                        rng,
                    )?,
                    aggregate: Mlp::new(
                        store,
                        &format!("{prefix}.proc{l}.aggregate"),
                        &Mlp::layer_sizes(2 * d, d, d, depth),
                        rng,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = Mlp::new(store, &format!("{prefix}.dec"), &Mlp::layer_sizes(d, d, dims.out, depth), rng)?;
        Ok(Self {
            mask_encoder,
            node_encoder,
            edge_encoder,
            layers,
            decoder,
            variant,
            dims,
        })
    }

    pub fn dims(&self) -> NetworkDims {
        self.dims
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, inputs: &GraphInputs) -> Result<LatentVars> {
        if inputs.node_features.cols() != self.dims.node_in {
            return shape_err(format!(
                "expected {} node features, got {}",
                self.dims.node_in,
                inputs.node_features.cols()
            ));
        }
        let x = tape.leaf(inputs.node_features.clone())?;
        let node_in = match (&self.mask_encoder, &inputs.mask) {
            (Some(enc), Some(mask)) => {
                let a = tape.leaf(mask.clone())?;
                let a_emb = enc.forward(tape, store, a)?;
                tape.concat(&[x, a_emb])?
            }
            (Some(_), None) => return shape_err("network expects a mask channel"),
            (None, _) => x,
        };
        let nodes = self.node_encoder.forward(tape, store, node_in)?;
        let e = tape.leaf(inputs.edge_attr.clone())?;
        let edges = self.edge_encoder.forward(tape, store, e)?;
        Ok(LatentVars { nodes, edges })
    }

    /// One processor layer with residual updates of both latent streams.
    pub fn process_layer(
        &self,
        layer: usize,
        tape: &mut Tape,
        store: &ParamStore,
        state: LatentVars,
        inputs: &GraphInputs,
    ) -> Result<LatentVars> {
        let n = tape.value(state.nodes).rows();
        let p = &self.layers[layer];
        let vi = tape.gather(state.nodes, inputs.senders.clone())?;
        let vj = tape.gather(state.nodes, inputs.receivers.clone())?;
        let message_in = message_input(self.variant, tape, vi, vj, state.edges, None)?;
        let messages = p.transport.forward(tape, store, message_in)?;
        let summed = tape.segment_sum(messages, inputs.senders.clone(), n)?;
        let node_in = tape.concat(&[state.nodes, summed])?;
        let node_update = p.aggregate.forward(tape, store, node_in)?;
        Ok(LatentVars {
            nodes: tape.add(state.nodes, node_update)?,
            edges: tape.add(state.edges, messages)?,
        })
    }

    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, state: LatentVars) -> Result<Var> {
        self.decoder.forward(tape, store, state.nodes)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inputs: &GraphInputs) -> Result<Var> {
        let mut state = self.encode(tape, store, inputs)?;
        for l in 0..self.layers.len() {
            state = self.process_layer(l, tape, store, state, inputs)?;
        }
        self.decode(tape, store, state)
    }
}
