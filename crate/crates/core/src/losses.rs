//! Training objective: reconstruction, KL to a uniform prior, smoothness
//! between consecutive windows and sparsity of relation distributions.

use serde::{Deserialize, Serialize};

use crate::data::TrajectorySet;
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::evolution::RolloutTrace;

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kl_cg: f64,
    pub kl_hg: f64,
    pub sm_cg: f64,
    pub sm_hg: f64,
    pub sp_cg: f64,
    pub sp_hg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kl_cg: 1.0,
            kl_hg: 1.0,
            sm_cg: 0.1,
            sm_hg: 0.1,
            sp_cg: 0.01,
            sp_hg: 0.01,
        }
    }
}

impl LossConfig {
    pub fn reconstruction_only() -> Self {
        LossConfig {
            kl_cg: 0.0,
            kl_hg: 0.0,
            sm_cg: 0.0,
            sm_hg: 0.0,
            sp_cg: 0.0,
            sp_hg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("kl_cg", self.kl_cg),
            ("kl_hg", self.kl_hg),
            ("sm_cg", self.sm_cg),
            ("sm_hg", self.sm_hg),
            ("sp_cg", self.sp_cg),
            ("sp_hg", self.sp_hg),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss coefficient {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// `sum ||x - mu||^2`.
pub fn loss_rec(g: &mut Graph, truth: Var, means: Var) -> Result<Var> {
    if g.value(truth).numel() != g.value(means).numel() {
        return Err(Error::dim("loss_rec", g.value(means).numel(), g.value(truth).numel()));
    }
    let t = if g.shape(truth) == g.shape(means) {
        truth
    } else {
        let s = g.shape(means).to_vec();
        g.reshape(truth, &s)
    };
    let d = g.sub(t, means);
    let sq = g.square(d);
    Ok(g.sum(sq))
}

/// `-sum q ln q` over every row.
pub fn entropy(g: &mut Graph, q: Var) -> Var {
    let lq = g.log_clamped(q, PROB_FLOOR);
    let p = g.mul(q, lq);
    let s = g.sum(p);
    g.scale(s, -1.0)
}

/// `sum p (ln p - ln q)` over every row.
pub fn kl_divergence(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    if g.shape(p) != g.shape(q) {
        return Err(Error::dim("kl_divergence", g.value(p).numel(), g.value(q).numel()));
    }
    let lp = g.log_clamped(p, PROB_FLOOR);
    let lq = g.log_clamped(q, PROB_FLOOR);
    let d = g.sub(lp, lq);
    let w = g.mul(p, d);
    Ok(g.sum(w))
}

/// `sum_rows KL(q || uniform_L)`.
pub fn kl_to_uniform(g: &mut Graph, q: Var) -> Var {
    let l = g.value(q).last_dim() as f64;
    let lq = g.log_clamped(q, PROB_FLOOR);
    let shifted = g.offset(lq, l.ln());
    let w = g.mul(q, shifted);
    g.sum(w)
}

fn weighted(g: &mut Graph, parts: &[(f64, Option<Var>)]) -> Var {
    let mut acc: Option<Var> = None;
    for &(alpha, v) in parts {
        if let Some(v) = v {
            if alpha == 0.0 {
                continue;
            }
            let s = g.scale(v, alpha);
            acc = Some(match acc {
                Some(a) => g.add(a, s),
                None => s,
            });
        }
    }
    acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

pub fn loss_kl(g: &mut Graph, edge_q: Option<Var>, hyper_q: Option<Var>, cfg: &LossConfig) -> Var {
    let e = edge_q.map(|q| kl_to_uniform(g, q));
    let h = hyper_q.map(|q| kl_to_uniform(g, q));
    weighted(g, &[(cfg.kl_cg, e), (cfg.kl_hg, h)])
}

pub fn loss_sparse(g: &mut Graph, edge_q: Option<Var>, hyper_q: Option<Var>, cfg: &LossConfig) -> Var {
    let e = edge_q.map(|q| entropy(g, q));
    let h = hyper_q.map(|q| entropy(g, q));
    weighted(g, &[(cfg.sp_cg, e), (cfg.sp_hg, h)])
}

/// `KL(q_beta || q_{beta+1})` for edges and hyperedges.
pub fn loss_smooth(
    g: &mut Graph,
    prev: (Option<Var>, Option<Var>),
    next: (Option<Var>, Option<Var>),
    cfg: &LossConfig,
) -> Result<Var> {
    let e = match (prev.0, next.0) {
        (Some(p), Some(q)) => Some(kl_divergence(g, p, q)?),
        _ => None,
    };
    let h = match (prev.1, next.1) {
        (Some(p), Some(q)) => Some(kl_divergence(g, p, q)?),
        _ => None,
    };
    Ok(weighted(g, &[(cfg.sm_cg, e), (cfg.sm_hg, h)]))
}

/// The four terms and their sum, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub rec: Var,
    pub kl: Var,
    pub smooth: Var,
    pub sparse: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kl: f64,
    pub smooth: f64,
    pub sparse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.rec += other.rec;
        self.kl += other.kl;
        self.smooth += other.smooth;
        self.sparse += other.sparse;
        self.total += other.total;
    }

    pub fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            rec: self.rec * c,
            kl: self.kl * c,
            smooth: self.smooth * c,
            sparse: self.sparse * c,
            total: self.total * c,
        }
    }

    /// First non-finite term, if any.
    pub fn check_finite(&self) -> Result<()> {
        for (term, value) in [
            ("rec", self.rec),
            ("kl", self.kl),
            ("smooth", self.smooth),
            ("sparse", self.sparse),
            ("total", self.total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: term.into(),
                    value,
                });
            }
        }
        Ok(())
    }
}

pub fn loss_total(g: &mut Graph, rec: Var, kl: Var, smooth: Var, sparse: Var) -> LossTerms {
    let a = g.add(rec, kl);
    let b = g.add(a, smooth);
    let total = g.add(b, sparse);
    LossTerms {
        rec,
        kl,
        smooth,
        sparse,
        total,
    }
}

pub fn breakdown(g: &Graph, t: &LossTerms) -> LossBreakdown {
    LossBreakdown {
        rec: g.value(t.rec).item(),
        kl: g.value(t.kl).item(),
        smooth: g.value(t.smooth).item(),
        sparse: g.value(t.sparse).item(),
        total: g.value(t.total).item(),
    }
}

/// Objective over every window of a rollout. `truth` is the normalized
/// scene holding all `T_h + T_f` steps. KL and sparsity count each window
/// whose relations were inferred; smoothness links consecutive ones.
pub fn trace_losses(
    g: &mut Graph,
    trace: &RolloutTrace,
    truth: &TrajectorySet,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let n = truth.agents();
    let mut rec: Option<Var> = None;
    let mut kl: Option<Var> = None;
    let mut sm: Option<Var> = None;
    let mut sp: Option<Var> = None;
    let mut prev: Option<(Option<Var>, Option<Var>)> = None;
    let acc = |g: &mut Graph, slot: &mut Option<Var>, v: Var| {
        *slot = Some(match *slot {
            Some(a) => g.add(a, v),
            None => v,
        });
    };
    for w in &trace.windows {
        let steps = w.steps;
        let start = w.window.decode.start;
        if truth.steps() < start + steps {
            return Err(Error::Validation("truth shorter than decoded horizon".into()));
        }
        let x = truth.window(start, steps);
        let x = g.constant(Tensor::from_parts(vec![n, steps * 2], x));
        let r = loss_rec(g, x, w.means)?;
        acc(g, &mut rec, r);
        if w.fresh {
            let k = loss_kl(g, w.edge_q, w.hyper_q, cfg);
            acc(g, &mut kl, k);
            let s = loss_sparse(g, w.edge_q, w.hyper_q, cfg);
            acc(g, &mut sp, s);
            let cur = (w.edge_q, w.hyper_q);
            if let Some(p) = prev {
                let m = loss_smooth(g, p, cur, cfg)?;
                acc(g, &mut sm, m);
            }
            prev = Some(cur);
        }
    }
    let mut zero = || g.constant(Tensor::scalar(0.0));
    let rec = rec.ok_or_else(|| Error::Contract("rollout has no windows".into()))?;
    let kl = kl.unwrap_or_else(&mut zero);
    let sm = sm.unwrap_or_else(&mut zero);
    let sp = sp.unwrap_or_else(&mut zero);
    Ok(loss_total(g, rec, kl, sm, sp))
}
