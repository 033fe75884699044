//! Relation-conditioned prediction for one window.
//!
//! Each non-null relation type owns an edge (or hyperedge) function; the
//! aggregated attribute is the type-probability-weighted mixture of those
//! functions. Null-type mass contributes nothing. A node function combines
//! the per-agent sums, and a single output head emits every displacement of
//! the window at once.

use std::f64::consts::PI;

use crate::diff::{Graph, MlpBlock, ParamStore, RngStream, Tensor, Var};
use crate::encoder::EdgeIndex;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug)]
pub struct AggregatedAttributes {
    /// `E x D` mixed edge attributes (absent when the graph path is off).
    pub edge: Option<Var>,
    /// `M x D` mixed hyperedge attributes.
    pub hyper: Option<Var>,
    /// `N x D` updated node attributes.
    pub nodes: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianRollout {
    /// `N x (steps * 2)` displacement means.
    pub displacements: Var,
    /// `N x (steps * 2)` position means, cumulative from the start positions.
    pub means: Var,
    pub steps: usize,
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    edge_fns: Vec<MlpBlock>,
    hyper_fns: Vec<MlpBlock>,
    node: MlpBlock,
    output: MlpBlock,
    hidden: usize,
    per_window: usize,
    variance: f64,
}

/// `(2 * per_window) x (2 * steps)` matrix mapping displacements to
/// cumulative offsets of the first `steps` steps.
fn cumsum_matrix(per_window: usize, steps: usize) -> Tensor {
    let (r, c) = (2 * per_window, 2 * steps);
    let mut m = vec![0.0; r * c];
    for s in 0..per_window {
        for t in s..steps {
            for axis in 0..2 {
                m[(2 * s + axis) * c + 2 * t + axis] = 1.0;
            }
        }
    }
    Tensor::from_parts(vec![r, c], m)
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.hidden;
        let act = cfg.activation;
        let tp = cfg.horizon.per_window();
        let edge_fns = (1..cfg.edge_types)
            .map(|l| {
                MlpBlock::with_hidden(store, &format!("decoder.graph.type{l}"), &[4 * d, d, d], act, rng)
            })
            .collect::<Result<_>>()?;
        let hyper_fns = (1..cfg.hyperedge_types)
            .map(|l| {
                MlpBlock::with_hidden(store, &format!("decoder.hyper.type{l}"), &[2 * d, d, d], act, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Decoder {
            edge_fns,
            hyper_fns,
            node: MlpBlock::with_hidden(store, "decoder.node", &[2 * d, d, d], act, rng)?,
            output: MlpBlock::with_hidden(store, "decoder.output", &[d, d, 2 * tp], act, rng)?,
            hidden: d,
            per_window: tp,
            variance: cfg.variance,
        })
    }

    pub fn per_window(&self) -> usize {
        self.per_window
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Type-weighted aggregation. `edge_types` is `E x L_CG`, `hyper_types`
    /// is `M x L_HG` and must come with an `M x N` incidence.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        index: &EdgeIndex,
        v1: Var,
        edge_types: Option<Var>,
        hyper_types: Option<Var>,
        incidence: Option<Var>,
    ) -> Result<AggregatedAttributes> {
        let n = index.agents();
        let d = self.hidden;

        let (edge, edge_sum) = match edge_types {
            Some(z) => {
                let l = g.value(z).last_dim();
                if l != self.edge_fns.len() + 1 {
                    return Err(Error::dim("edge type count", self.edge_fns.len() + 1, l));
                }
                let vi = g.gather_rows(v1, index.recv.clone());
                let vj = g.gather_rows(v1, index.send.clone());
                let pair = g.concat(&[vi, vj]);
                let mut mix: Option<Var> = None;
                for (k, f) in self.edge_fns.iter().enumerate() {
                    let out = f.forward(g, store, pair)?;
                    let w = g.column(z, k + 1);
                    let part = g.scale_rows(out, w);
                    mix = Some(match mix {
                        Some(acc) => g.add(acc, part),
                        None => part,
                    });
                }
                let mix = mix.expect("at least one non-null edge type");
                let sum = g.scatter_add_rows(mix, index.recv.clone(), n);
                (Some(mix), sum)
            }
            None => (None, g.constant(Tensor::zeros(&[n, d]))),
        };

        let (hyper, hyper_sum) = match (hyper_types, incidence) {
            (Some(z), Some(inc)) => {
                let l = g.value(z).last_dim();
                if l != self.hyper_fns.len() + 1 {
                    return Err(Error::dim("hyperedge type count", self.hyper_fns.len() + 1, l));
                }
                let members = g.matmul(inc, v1);
                let mut mix: Option<Var> = None;
                for (k, f) in self.hyper_fns.iter().enumerate() {
                    let out = f.forward(g, store, members)?;
                    let w = g.column(z, k + 1);
                    let part = g.scale_rows(out, w);
                    mix = Some(match mix {
                        Some(acc) => g.add(acc, part),
                        None => part,
                    });
                }
                let mix = mix.expect("at least one non-null hyperedge type");
                let inc_t = g.transpose(inc);
                let sum = g.matmul(inc_t, mix);
                (Some(mix), sum)
            }
            (None, None) => (None, g.constant(Tensor::zeros(&[n, d]))),
            _ => {
                return Err(Error::Contract(
                    "hyperedge types and incidence must be given together".into(),
                ))
            }
        };

        let both = g.concat(&[edge_sum, hyper_sum]);
        let nodes = self.node.forward(g, store, both)?;
        Ok(AggregatedAttributes { edge, hyper, nodes })
    }

    /// Displacement means from the node attributes; the first `steps` of
    /// them are accumulated from `start` (`N x 2`, agent-major).
    pub fn rollout(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        nodes: Var,
        start: &[f64],
        steps: usize,
    ) -> Result<GaussianRollout> {
        if steps < 1 || steps > self.per_window {
            return Err(Error::Contract(format!(
                "rollout steps must be in 1..={}, got {steps}",
                self.per_window
            )));
        }
        let n = g.value(nodes).rows();
        if start.len() != 2 * n {
            return Err(Error::dim("rollout start positions", 2 * n, start.len()));
        }
        let all = self.output.forward(g, store, nodes)?;
        let cum = g.constant(cumsum_matrix(self.per_window, steps));
        let offsets = g.matmul(all, cum);
        let mut base = Vec::with_capacity(n * steps * 2);
        for i in 0..n {
            for _ in 0..steps {
                base.extend_from_slice(&start[2 * i..2 * i + 2]);
            }
        }
        let base = g.constant(Tensor::from_parts(vec![n, steps * 2], base));
        let means = g.add(offsets, base);
        let displacements = if steps == self.per_window {
            all
        } else {
            let keep = g.constant(cumsum_identity(self.per_window, steps));
            g.matmul(all, keep)
        };
        Ok(GaussianRollout {
            displacements,
            means,
            steps,
            variance: self.variance,
        })
    }
}

/// Selection matrix keeping the first `steps` displacement pairs.
fn cumsum_identity(per_window: usize, steps: usize) -> Tensor {
    let (r, c) = (2 * per_window, 2 * steps);
    let mut m = vec![0.0; r * c];
    for k in 0..c {
        m[k * c + k] = 1.0;
    }
    Tensor::from_parts(vec![r, c], m)
}

/// Sum of isotropic 2-D Gaussian log densities `N(x | mu, variance * I)`.
/// `truth` and `means` hold interleaved `(x, y)` pairs of equal shape.
pub fn log_likelihood(g: &mut Graph, truth: Var, means: Var, variance: f64) -> Result<Var> {
    if !(variance > 0.0) {
        return Err(Error::Contract(format!("variance must be positive, got {variance}")));
    }
    if g.value(truth).numel() != g.value(means).numel() {
        return Err(Error::dim("log_likelihood", g.value(means).numel(), g.value(truth).numel()));
    }
    let points = g.value(means).numel() / 2;
    let t = if g.shape(truth) == g.shape(means) {
        truth
    } else {
        let s = g.shape(means).to_vec();
        g.reshape(truth, &s)
    };
    let diff = g.sub(t, means);
    let sq = g.square(diff);
    let total = g.sum(sq);
    let scaled = g.scale(total, -0.5 / variance);
    Ok(g.offset(scaled, -(points as f64) * (2.0 * PI * variance).ln()))
}
