use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Stack of affine layers with per-layer activation.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    name: String,
    widths: Vec<usize>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    activations: Vec<Activation>,
}

impl MlpBlock {
    /// `widths` lists every layer boundary, input first; `activations` has one
    /// entry per layer (`widths.len() - 1`).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activations: &[Activation],
        rng: &mut RngStream,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Contract(format!("{name}: need at least one layer")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::dim(
                format!("{name}: activation list"),
                widths.len() - 1,
                activations.len(),
            ));
        }
        if widths.contains(&0) {
            return Err(Error::Contract(format!("{name}: zero-width layer")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            weights.push(store.add_glorot(format!("{name}.{l}.weight"), pair[0], pair[1], rng));
            biases.push(store.add(format!("{name}.{l}.bias"), Tensor::zeros(&[pair[1]])));
        }
        Ok(MlpBlock {
            name: name.to_string(),
            widths: widths.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Hidden layers use `hidden`, the output layer is linear.
    pub fn with_hidden(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::None;
        }
        Self::new(store, name, widths, &acts, rng)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, input: Var) -> Result<Var> {
        let got = g.value(input).last_dim();
        if got != self.widths[0] {
            return Err(Error::dim(format!("{}.0 input", self.name), self.widths[0], got));
        }
        let rows = g.value(input).rows();
        let mut x = if g.shape(input).len() == 2 {
            input
        } else {
            g.reshape(input, &[rows, got])
        };
        for l in 0..self.weights.len() {
            let w = g.param(store, self.weights[l]);
            let b = g.param(store, self.biases[l]);
            let h = g.matmul(x, w);
            let h = g.add_bias(h, b);
            x = match self.activations[l] {
                Activation::Relu => g.relu(h),
                Activation::Tanh => g.tanh(h),
                Activation::None => h,
            };
        }
        Ok(x)
    }
}
