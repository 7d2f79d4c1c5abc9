use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Affine stack with ReLU between layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    sizes: Vec<usize>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`; registers `{prefix}.w{i}` and
    /// `{prefix}.b{i}` in `store`.
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return invalid("an MLP needs at least an input and an output size");
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        let last = sizes.len() - 2;
        for (i, pair) in sizes.windows(2).enumerate() {
            let w = store.insert_he(format!("{prefix}.w{i}"), pair[0], pair[1], rng)?;
            if i == last {
                // linear output layer: no ReLU follows, so drop the He factor of 2
                store.get_mut(w).value.data_mut().iter_mut().for_each(|v| *v *= std::f64::consts::FRAC_1_SQRT_2);
            }
            let b = store.insert(format!("{prefix}.b{i}"), Tensor::zeros(&[pair[1]]))?;
            layers.push((w, b));
        }
        Ok(Self {
            layers,
            sizes: sizes.to_vec(),
        })
    }

    /// Sizes for `depth` affine layers of width `hidden`.
    pub fn layer_sizes(input: usize, hidden: usize, output: usize, depth: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth.saturating_sub(1)));
        sizes.push(output);
        sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Last-layer weight, for output initialisation.
    pub fn output_weight(&self) -> ParamId {
        self.layers.last().unwrap().0
    }

    /// Last-layer bias, for output initialisation.
    pub fn output_bias(&self) -> ParamId {
        self.layers.last().unwrap().1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input_size() {
            return shape_err(format!(
                "MLP expects {} input features, got {}",
                self.input_size(),
                tape.value(x).cols()
            ));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}
