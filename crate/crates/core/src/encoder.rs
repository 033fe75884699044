//! Group-aware relational reasoning over one observation window.
//!
//! Two rounds of pair-wise message passing produce node attributes `V1`.
//! From `V1` a per-agent head scores membership in each of `M` hyperedge
//! slots; the sampled incidence matrix drives two rounds of hypergraph
//! message passing. Final heads map edge and hyperedge attributes to
//! relation-type logits; type 0 is the null type.
//!
//! Edges are the ordered pairs `(i, j)`, `i != j`, enumerated receiver-major
//! (see [`EdgeIndex`]). Edge `(i, j)` carries the message from `j` to `i`.

use std::sync::Arc;

use crate::diff::{gumbel_softmax, Graph, MlpBlock, ParamStore, RngStream, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Branches, ModelConfig};

/// Ordered agent pairs of a complete directed graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    agents: usize,
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn complete(agents: usize) -> Self {
        let mut recv = Vec::with_capacity(agents * agents.saturating_sub(1));
        let mut send = Vec::with_capacity(recv.capacity());
        for i in 0..agents {
            for j in 0..agents {
                if i != j {
                    recv.push(i);
                    send.push(j);
                }
            }
        }
        EdgeIndex {
            agents,
            recv: recv.into(),
            send: send.into(),
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn len(&self) -> usize {
        self.recv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recv.is_empty()
    }

    /// Row of edge `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        if i == j || i >= self.agents || j >= self.agents {
            return None;
        }
        Some(i * (self.agents - 1) + if j < i { j } else { j - 1 })
    }

    /// Expand `E x L` edge rows into a dense `N x N x L` block with zero
    /// diagonal.
    pub fn to_dense(&self, rows: &Tensor) -> Vec<f64> {
        let l = rows.last_dim();
        let n = self.agents;
        let mut out = vec![0.0; n * n * l];
        for (k, (&i, &j)) in self.recv.iter().zip(self.send.iter()).enumerate() {
            out[(i * n + j) * l..(i * n + j + 1) * l].copy_from_slice(rows.row(k));
        }
        out
    }
}

/// `v_self`, `v_social` (each `N x D`) and their concatenation `v1` (`N x 2D`).
#[derive(Clone, Copy, Debug)]
pub struct NodeAttributes {
    pub v_self: Var,
    pub v_social: Var,
    pub v1: Var,
}

/// First- and second-round edge attributes, `E x D` rows in [`EdgeIndex`] order.
#[derive(Clone, Copy, Debug)]
pub struct EdgeAttributes {
    pub e1: Var,
    pub e2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct IncidenceState {
    /// Membership logits, `(N * M) x 2` with column 0 = member.
    pub logits: Var,
    /// Membership probabilities `I_PIM`, `M x N`.
    pub probs: Var,
    /// Sampled incidence `I_HG`, `M x N` (relaxed or hard).
    pub sample: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HyperedgeAttributes {
    pub e1: Var,
    pub v1: Var,
    pub e2: Var,
}

/// Relation-type samples; rows are simplex points, column 0 is the null type.
#[derive(Clone, Copy, Debug)]
pub struct RelationDistributions {
    /// `E x L_CG`.
    pub edge: Option<Var>,
    /// `M x L_HG`.
    pub hyper: Option<Var>,
}

/// Everything one encoder pass produces before relation typing.
#[derive(Clone, Debug)]
pub struct EncodedWindow {
    pub edges_index: EdgeIndex,
    pub nodes: NodeAttributes,
    pub edges: EdgeAttributes,
    pub incidence: Option<IncidenceState>,
    pub hyper: Option<HyperedgeAttributes>,
    pub edge_logits: Option<Var>,
    pub hyper_logits: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    history: MlpBlock,
    pair_edge1: MlpBlock,
    pair_node1: MlpBlock,
    pair_edge2: MlpBlock,
    edge_type_head: MlpBlock,
    incidence_head: MlpBlock,
    hyper_edge1: MlpBlock,
    hyper_node1: MlpBlock,
    hyper_edge2: MlpBlock,
    hyper_type_head: MlpBlock,
    history_len: usize,
    max_hyperedges: usize,
    temperature: f64,
}

/// Per-agent history features: flattened first differences followed by the
/// last absolute position, `N x 2T_h`.
pub fn history_features(window: &[f64], agents: usize, history: usize) -> Result<Tensor> {
    if history < 2 {
        return Err(Error::Contract(format!(
            "history embedding needs at least 2 steps, got {history}"
        )));
    }
    if window.len() != agents * history * 2 {
        return Err(Error::dim("encoder window", agents * history * 2, window.len()));
    }
    let width = 2 * history;
    let mut out = Vec::with_capacity(agents * width);
    for i in 0..agents {
        let w = &window[i * history * 2..(i + 1) * history * 2];
        for t in 1..history {
            out.push(w[2 * t] - w[2 * t - 2]);
            out.push(w[2 * t + 1] - w[2 * t - 1]);
        }
        out.push(w[2 * history - 2]);
        out.push(w[2 * history - 1]);
    }
    Ok(Tensor::from_parts(vec![agents, width], out))
}

/// Turn `(N * M) x 2` membership logits into `(I_PIM, I_HG)`, both `M x N`.
pub fn incidence_from_logits(
    g: &mut Graph,
    logits: Var,
    agents: usize,
    slots: usize,
    temperature: f64,
    noise: Option<&mut RngStream>,
    hard: bool,
) -> Result<IncidenceState> {
    if g.value(logits).numel() != agents * slots * 2 {
        return Err(Error::dim("incidence logits", agents * slots * 2, g.value(logits).numel()));
    }
    let pairs = g.reshape(logits, &[agents * slots, 2]);
    let soft = g.softmax(pairs);
    let member = g.column(soft, 0);
    let member = g.reshape(member, &[agents, slots]);
    let probs = g.transpose(member);

    let sample = gumbel_softmax(g, pairs, temperature, noise, hard)?;
    let member = g.column(sample, 0);
    let member = g.reshape(member, &[agents, slots]);
    let sample = g.transpose(member);
    Ok(IncidenceState {
        logits: pairs,
        probs,
        sample,
    })
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let d = cfg.hidden;
        let act = cfg.activation;
        let th = cfg.horizon.history;
        let m = cfg.max_hyperedges;
        let mut mlp = |name: &str, widths: &[usize]| {
            MlpBlock::with_hidden(store, name, widths, act, rng)
        };
        Ok(Encoder {
            history: mlp("encoder.pair.history", &[2 * th, d, d])?,
            pair_edge1: mlp("encoder.pair.edge1", &[2 * d, d, d])?,
            pair_node1: mlp("encoder.pair.node1", &[d, d, d])?,
            pair_edge2: mlp("encoder.pair.edge2", &[4 * d, d, d])?,
            edge_type_head: mlp("encoder.pair.edge_type", &[d, cfg.edge_types])?,
            incidence_head: mlp("encoder.hyper.incidence", &[2 * d, d, 2 * m])?,
            hyper_edge1: mlp("encoder.hyper.edge1", &[2 * d, d, d])?,
            hyper_node1: mlp("encoder.hyper.node1", &[d, d, d])?,
            hyper_edge2: mlp("encoder.hyper.edge2", &[d, d, d])?,
            hyper_type_head: mlp("encoder.hyper.edge_type", &[d, cfg.hyperedge_types])?,
            history_len: th,
            max_hyperedges: m,
            temperature: cfg.temperature,
        })
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    /// `v_self = f_h(features)` for an agent-major `N x T_h x 2` window.
    pub fn embed_history(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &[f64],
        agents: usize,
    ) -> Result<Var> {
        let feats = history_features(window, agents, self.history_len)?;
        let x = g.constant(feats);
        self.history.forward(g, store, x)
    }

    pub fn pairwise_rounds(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v_self: Var,
        index: &EdgeIndex,
    ) -> Result<(EdgeAttributes, NodeAttributes)> {
        let n = index.agents();
        let vi = g.gather_rows(v_self, index.recv.clone());
        let vj = g.gather_rows(v_self, index.send.clone());
        let pair = g.concat(&[vi, vj]);
        let e1 = self.pair_edge1.forward(g, store, pair)?;
        let incoming = g.scatter_add_rows(e1, index.recv.clone(), n);
        let v_social = self.pair_node1.forward(g, store, incoming)?;
        let v1 = g.concat(&[v_self, v_social]);

        let v1i = g.gather_rows(v1, index.recv.clone());
        let v1j = g.gather_rows(v1, index.send.clone());
        let pair2 = g.concat(&[v1i, v1j]);
        let e2 = self.pair_edge2.forward(g, store, pair2)?;
        Ok((
            EdgeAttributes { e1, e2 },
            NodeAttributes {
                v_self,
                v_social,
                v1,
            },
        ))
    }

    pub fn infer_incidence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v1: Var,
        noise: Option<&mut RngStream>,
        hard: bool,
    ) -> Result<IncidenceState> {
        let agents = g.value(v1).rows();
        let logits = self.incidence_head.forward(g, store, v1)?;
        incidence_from_logits(
            g,
            logits,
            agents,
            self.max_hyperedges,
            self.temperature,
            noise,
            hard,
        )
    }

    /// Hypergraph message passing; memberships weighted by the entries of
    /// `incidence` (`M x N`).
    pub fn hypergraph_rounds(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        v1: Var,
        incidence: Var,
    ) -> Result<HyperedgeAttributes> {
        let (m, n) = (g.shape(incidence)[0], g.shape(incidence)[1]);
        if g.value(v1).rows() != n {
            return Err(Error::dim("hypergraph node count", n, g.value(v1).rows()));
        }
        let members = g.matmul(incidence, v1);
        let e1 = self.hyper_edge1.forward(g, store, members)?;
        let inc_t = g.transpose(incidence);
        let incoming = g.matmul(inc_t, e1);
        let hv1 = self.hyper_node1.forward(g, store, incoming)?;
        let members2 = g.matmul(incidence, hv1);
        let e2 = self.hyper_edge2.forward(g, store, members2)?;
        debug_assert_eq!(g.value(e2).rows(), m);
        Ok(HyperedgeAttributes { e1, v1: hv1, e2 })
    }

    pub fn edge_type_logits(&self, g: &mut Graph, store: &ParamStore, e2: Var) -> Result<Var> {
        self.edge_type_head.forward(g, store, e2)
    }

    pub fn hyper_type_logits(&self, g: &mut Graph, store: &ParamStore, e2: Var) -> Result<Var> {
        self.hyper_type_head.forward(g, store, e2)
    }

    /// Gumbel-Softmax samples of relation types from logits. Edge rows are
    /// drawn before hyperedge rows.
    pub fn type_relations(
        &self,
        g: &mut Graph,
        edge_logits: Option<Var>,
        hyper_logits: Option<Var>,
        mut noise: Option<&mut RngStream>,
        hard: bool,
    ) -> Result<RelationDistributions> {
        let edge = match edge_logits {
            Some(l) => Some(gumbel_softmax(g, l, self.temperature, noise.as_deref_mut(), hard)?),
            None => None,
        };
        let hyper = match hyper_logits {
            Some(l) => Some(gumbel_softmax(g, l, self.temperature, noise, hard)?),
            None => None,
        };
        Ok(RelationDistributions { edge, hyper })
    }

    /// Everything up to (not including) relation sampling. Incidence noise
    /// is drawn here when the hypergraph branch is active.
    pub fn encode_structure(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &[f64],
        agents: usize,
        branches: Branches,
        noise: Option<&mut RngStream>,
        hard: bool,
    ) -> Result<EncodedWindow> {
        let index = EdgeIndex::complete(agents);
        let v_self = self.embed_history(g, store, window, agents)?;
        let (edges, nodes) = self.pairwise_rounds(g, store, v_self, &index)?;
        let edge_logits = if branches.graph {
            Some(self.edge_type_logits(g, store, edges.e2)?)
        } else {
            None
        };
        let (incidence, hyper, hyper_logits) = if branches.hypergraph {
            let inc = self.infer_incidence(g, store, nodes.v1, noise, hard)?;
            let hyper = self.hypergraph_rounds(g, store, nodes.v1, inc.sample)?;
            let logits = self.hyper_type_logits(g, store, hyper.e2)?;
            (Some(inc), Some(hyper), Some(logits))
        } else {
            (None, None, None)
        };
        Ok(EncodedWindow {
            edges_index: index,
            nodes,
            edges,
            incidence,
            hyper,
            edge_logits,
            hyper_logits,
        })
    }

    /// Full encoder pass: structure plus sampled relation types.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        window: &[f64],
        agents: usize,
        branches: Branches,
        mut noise: Option<&mut RngStream>,
        hard: bool,
    ) -> Result<(EncodedWindow, RelationDistributions)> {
        let enc =
            self.encode_structure(g, store, window, agents, branches, noise.as_deref_mut(), hard)?;
        let rel = self.type_relations(g, enc.edge_logits, enc.hyper_logits, noise, hard)?;
        Ok((enc, rel))
    }
}
