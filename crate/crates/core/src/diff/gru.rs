use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::RngStream;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gated recurrent cell operating on a batch of rows.
///
/// ```text
/// u  = sigmoid([x, h] W_u + b_u)
/// r  = sigmoid([x, h] W_r + b_r)
/// c  = tanh([x, r * h] W_c + b_c)
/// h' = (1 - u) * c + u * h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    input: usize,
    hidden: usize,
    w_update: ParamId,
    b_update: ParamId,
    w_reset: ParamId,
    b_reset: ParamId,
    w_cand: ParamId,
    b_cand: ParamId,
    name: String,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Self {
        let fan = input + hidden;
        let mut gate = |gate: &str| {
            let w = store.add_glorot(format!("{name}.{gate}.weight"), fan, hidden, rng);
            let b = store.add(format!("{name}.{gate}.bias"), Tensor::zeros(&[hidden]));
            (w, b)
        };
        let (w_update, b_update) = gate("update");
        let (w_reset, b_reset) = gate("reset");
        let (w_cand, b_cand) = gate("candidate");
        GruCell {
            input,
            hidden,
            w_update,
            b_update,
            w_reset,
            b_reset,
            w_cand,
            b_cand,
            name: name.to_string(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_update,
            self.b_update,
            self.w_reset,
            self.b_reset,
            self.w_cand,
            self.b_cand,
        ]
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, input: Var, hidden: Var) -> Result<Var> {
        let xw = g.value(input).last_dim();
        if xw != self.input {
            return Err(Error::dim(format!("{} input", self.name), self.input, xw));
        }
        let hw = g.value(hidden).last_dim();
        if hw != self.hidden {
            return Err(Error::dim(format!("{} hidden", self.name), self.hidden, hw));
        }
        let (xr, hr) = (g.value(input).rows(), g.value(hidden).rows());
        if xr != hr {
            return Err(Error::dim(format!("{} batch rows", self.name), xr, hr));
        }

        let xh = g.concat(&[input, hidden]);
        let affine = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| {
            let w = g.param(store, w);
            let b = g.param(store, b);
            let y = g.matmul(x, w);
            g.add_bias(y, b)
        };
        let u = affine(g, xh, self.w_update, self.b_update);
        let u = g.sigmoid(u);
        let r = affine(g, xh, self.w_reset, self.b_reset);
        let r = g.sigmoid(r);
        let h = if g.shape(hidden).len() == 2 {
            hidden
        } else {
            g.reshape(hidden, &[hr, hw])
        };
        let rh = g.mul(r, h);
        let xrh = g.concat(&[input, rh]);
        let c = affine(g, xrh, self.w_cand, self.b_cand);
        let c = g.tanh(c);
        let keep = g.mul(u, h);
        let one_minus_u = g.one_minus(u);
        let fresh = g.mul(one_minus_u, c);
        Ok(g.add(fresh, keep))
    }
}
