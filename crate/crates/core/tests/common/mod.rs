//! Shared helpers for integration tests and the acceptance binary.
#![allow(dead_code)]

use std::collections::HashMap;

use grouptraj::data::{HorizonSpec, TrajectorySet, Unit};
use grouptraj::decoder::log_likelihood;
use grouptraj::diff::{Graph, ParamStore, RngStream, Tensor, Var};
use grouptraj::encoder::EdgeIndex;
use grouptraj::evolution::{run_windows, Continuation, EvolutionState, RolloutOptions};
use grouptraj::losses::{trace_losses, LossConfig};
use grouptraj::model::{Branches, Model, ModelConfig};
use grouptraj::sim::{Obstacle, SimConfig};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.max_rel <= FD_TOL
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Compare the analytic gradient of the scalar built by `f` with central
/// differences on up to `per_tensor` random entries of every parameter whose
/// name passes `select`.
pub fn fd_check<F>(
    store: &mut ParamStore,
    select: impl Fn(&str) -> bool,
    per_tensor: usize,
    rng: &mut RngStream,
    f: F,
) -> FdReport
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, store);
    g.backward(out).expect("scalar output");
    let grads: HashMap<usize, Vec<f64>> =
        g.param_grads().into_iter().map(|(id, v)| (id.index(), v)).collect();
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let o = f(&mut g, s);
        g.value(o).item()
    };
    let mut rep = FdReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        if !select(&name) {
            continue;
        }
        let n = store.get(id).numel();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| ((rng.uniform() * n as f64) as usize).min(n - 1)).collect()
        };
        for k in picks {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + FD_STEP;
            let up = eval(store);
            store.get_mut(id).data_mut()[k] = orig - FD_STEP;
            let down = eval(store);
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(&id.index()).map_or(0.0, |v| v[k]);
            let r = rel_err(analytic, numeric);
            rep.checked += 1;
            if r > rep.max_rel {
                rep.max_rel = r;
                rep.worst = format!("{name}[{k}]: analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    rep
}

pub fn normal_tensor(rng: &mut RngStream, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

pub fn uniform_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform()).collect()).unwrap()
}

/// Random simplex rows, `rows x cols`.
pub fn simplex_rows(rng: &mut RngStream, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..cols).map(|_| -rng.uniform().ln()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Smooth random walks of `agents` agents over `steps` steps.
pub fn random_scene(rng: &mut RngStream, agents: usize, steps: usize) -> TrajectorySet {
    let mut pos = Vec::with_capacity(agents * steps * 2);
    for _ in 0..agents {
        let mut p = [3.0 * rng.normal(), 3.0 * rng.normal()];
        let mut v = [rng.normal(), rng.normal()];
        for _ in 0..steps {
            pos.extend_from_slice(&p);
            v[0] += 0.2 * rng.normal();
            v[1] += 0.2 * rng.normal();
            p[0] += 0.4 * v[0];
            p[1] += 0.4 * v[1];
        }
    }
    TrajectorySet::new(agents, steps, pos, 0.4, Unit::Meters).unwrap()
}

/// Small model sizes used by the gradient checks.
pub fn small_config(rng: &mut RngStream) -> ModelConfig {
    let hidden = 4 + (rng.uniform() * 5.0) as usize % 5;
    ModelConfig {
        hidden,
        gru_hidden: hidden,
        edge_types: 2 + (rng.uniform() * 2.0) as usize % 2,
        hyperedge_types: 2 + (rng.uniform() * 2.0) as usize % 2,
        max_hyperedges: 2 + (rng.uniform() * 2.0) as usize % 2,
        horizon: HorizonSpec::new(4, 6, 2).unwrap(),
        ..ModelConfig::default()
    }
}

pub fn all_branches() -> Branches {
    Branches {
        graph: true,
        hypergraph: true,
        dynamic: true,
    }
}

fn weighted_sum(g: &mut Graph, v: Var, rng: &mut RngStream) -> Var {
    let shape = g.shape(v).to_vec();
    let w = g.constant(normal_tensor(rng, &shape, 1.0));
    let p = g.mul(v, w);
    g.sum(p)
}

fn add_all(g: &mut Graph, parts: &[Var]) -> Var {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p);
    }
    acc
}

/// Encoder: random scalar of every encoder output with fixed Gumbel noise.
pub fn fd_encoder(seed: u64) -> FdReport {
    let mut rng = RngStream::new(seed);
    let cfg = small_config(&mut rng);
    let agents = 2 + (rng.uniform() * 3.0) as usize % 3;
    let mut model = Model::new(cfg.clone(), seed).unwrap();
    let scene = random_scene(&mut rng, agents, cfg.horizon.history);
    let window = scene.window(0, cfg.horizon.history);
    let noise = rng.derive(1);
    let wseed = rng.derive(2);
    let enc = model.encoder.clone();
    let f = |g: &mut Graph, store: &ParamStore| {
        let mut n = noise.clone();
        let mut w = wseed.clone();
        let (e, rel) = enc.encode(g, store, &window, agents, all_branches(), Some(&mut n), false).unwrap();
        let inc = e.incidence.unwrap();
        let parts = [
            e.edge_logits.unwrap(),
            e.hyper_logits.unwrap(),
            inc.probs,
            inc.sample,
            rel.edge.unwrap(),
            rel.hyper.unwrap(),
            e.nodes.v1,
        ];
        let terms: Vec<Var> = parts.iter().map(|&p| weighted_sum(g, p, &mut w)).collect();
        add_all(g, &terms)
    };
    fd_check(&mut model.store, |n| n.starts_with("encoder."), 6, &mut rng, f)
}

/// Decoder: aggregation plus rollout from random inputs that are themselves
/// checked as parameters.
pub fn fd_decoder(seed: u64) -> FdReport {
    let mut rng = RngStream::new(seed);
    let cfg = small_config(&mut rng);
    let agents = 2 + (rng.uniform() * 3.0) as usize % 3;
    let mut model = Model::new(cfg.clone(), seed).unwrap();
    let index = EdgeIndex::complete(agents);
    let m = cfg.max_hyperedges;
    let store = &mut model.store;
    let v1 = store.add("input.v1", normal_tensor(&mut rng, &[agents, 2 * cfg.hidden], 1.0));
    let ze = store.add("input.edge_types", uniform_tensor(&mut rng, &[index.len(), cfg.edge_types]));
    let zh = store.add("input.hyper_types", uniform_tensor(&mut rng, &[m, cfg.hyperedge_types]));
    let inc = store.add("input.incidence", uniform_tensor(&mut rng, &[m, agents]));
    let steps = cfg.horizon.gap;
    let start: Vec<f64> = (0..2 * agents).map(|_| rng.normal()).collect();
    let truth = normal_tensor(&mut rng, &[agents, 2 * steps], 1.0);
    let wseed = rng.derive(2);
    let dec = model.decoder.clone();
    let f = |g: &mut Graph, store: &ParamStore| {
        let mut w = wseed.clone();
        let v1 = g.param(store, v1);
        let ze = g.param(store, ze);
        let zh = g.param(store, zh);
        let inc = g.param(store, inc);
        let agg = dec.aggregate(g, store, &index, v1, Some(ze), Some(zh), Some(inc)).unwrap();
        let roll = dec.rollout(g, store, agg.nodes, &start, steps).unwrap();
        let t = g.constant(truth.clone());
        let ll = log_likelihood(g, t, roll.means, 0.5).unwrap();
        let a = weighted_sum(g, roll.means, &mut w);
        let b = weighted_sum(g, agg.edge.unwrap(), &mut w);
        let c = weighted_sum(g, agg.hyper.unwrap(), &mut w);
        add_all(g, &[ll, a, b, c])
    };
    fd_check(store, |n| n.starts_with("decoder.") || n.starts_with("input."), 6, &mut rng, f)
}

/// Evolution: three chained recurrent updates of random logits.
pub fn fd_evolution(seed: u64) -> FdReport {
    let mut rng = RngStream::new(seed);
    let cfg = small_config(&mut rng);
    let agents = 2 + (rng.uniform() * 3.0) as usize % 3;
    let mut model = Model::new(cfg.clone(), seed).unwrap();
    let e = agents * (agents - 1);
    let m = cfg.max_hyperedges;
    let store = &mut model.store;
    let le = store.add("input.edge_logits", normal_tensor(&mut rng, &[e, cfg.edge_types], 1.0));
    let lh = store.add("input.hyper_logits", normal_tensor(&mut rng, &[m, cfg.hyperedge_types], 1.0));
    let wseed = rng.derive(2);
    let evo = model.evolution.clone();
    let f = |g: &mut Graph, store: &ParamStore| {
        let mut w = wseed.clone();
        let mut el = g.param(store, le);
        let mut hl = g.param(store, lh);
        let mut state = EvolutionState::new();
        let mut terms = Vec::new();
        for _ in 0..3 {
            let (r, next) = evo.evolve(g, store, Some(el), Some(hl), &state).unwrap();
            terms.push(weighted_sum(g, r.edge_q.unwrap(), &mut w));
            terms.push(weighted_sum(g, r.hyper_q.unwrap(), &mut w));
            el = r.edge_logits.unwrap();
            hl = r.hyper_logits.unwrap();
            state = next;
        }
        add_all(g, &terms)
    };
    fd_check(store, |n| n.starts_with("evolve.") || n.starts_with("input."), 6, &mut rng, f)
}

/// Losses: the full training objective of a teacher-forced multi-window
/// rollout, checked against every model parameter.
pub fn fd_losses(seed: u64) -> FdReport {
    let mut rng = RngStream::new(seed);
    let cfg = small_config(&mut rng);
    let agents = 2 + (rng.uniform() * 3.0) as usize % 3;
    let mut model = Model::new(cfg.clone(), seed).unwrap();
    let scene = random_scene(&mut rng, agents, cfg.horizon.total());
    let noise = rng.derive(1);
    let loss = LossConfig {
        kl_cg: 0.7,
        kl_hg: 1.3,
        sm_cg: 0.4,
        sm_hg: 0.6,
        sp_cg: 0.2,
        sp_hg: 0.3,
    };
    let windows = cfg.horizon.window_count();
    let frozen = model.clone();
    let f = |g: &mut Graph, store: &ParamStore| {
        let mut m = frozen.clone();
        m.store = store.clone();
        let opts = RolloutOptions {
            branches: all_branches(),
            hard: false,
            teacher: vec![true; windows],
            continuation: Continuation::Means,
        };
        let mut n = noise.clone();
        let trace = run_windows(&m, g, &scene, &opts, Some(&mut n)).unwrap();
        trace_losses(g, &trace, &scene, &loss).unwrap().total
    };
    fd_check(&mut model.store, |_| true, 3, &mut rng, f)
}

/// Largest deviation from agent-permutation equivariance of a full encoder
/// pass (frozen noise) on a random scene: edge types follow both agent
/// indices, incidence columns and node rows follow the agent index, and
/// hyperedge types are unchanged.
pub fn equivariance_error(seed: u64, agents: usize) -> f64 {
    let mut rng = RngStream::new(seed);
    let cfg = ModelConfig {
        hidden: 8,
        gru_hidden: 8,
        max_hyperedges: 3,
        edge_types: 3,
        hyperedge_types: 3,
        horizon: HorizonSpec::new(6, 4, 2).unwrap(),
        ..ModelConfig::default()
    };
    let model = Model::new(cfg.clone(), seed).unwrap();
    let scene = random_scene(&mut rng, agents, cfg.horizon.history);
    let mut perm: Vec<usize> = (0..agents).collect();
    for k in (1..agents).rev() {
        let j = ((rng.uniform() * (k + 1) as f64) as usize).min(k);
        perm.swap(k, j);
    }
    let permuted = scene.permuted(&perm);
    let run = |ts: &TrajectorySet| {
        let mut g = Graph::new();
        let w = ts.window(0, cfg.horizon.history);
        let (e, rel) = model
            .encoder
            .encode(&mut g, &model.store, &w, agents, all_branches(), None, false)
            .unwrap();
        let take = |v: Var| g.value(v).clone();
        (
            take(rel.edge.unwrap()),
            take(rel.hyper.unwrap()),
            take(e.incidence.unwrap().sample),
            take(e.nodes.v1),
        )
    };
    let (ze, zh, inc, v1) = run(&scene);
    let (pze, pzh, pinc, pv1) = run(&permuted);
    let index = EdgeIndex::complete(agents);
    let mut err: f64 = 0.0;
    let mut diff = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            err = err.max((x - y).abs());
        }
    };
    for k in 0..agents {
        // new agent k is old agent perm[k]
        diff(pv1.row(k), v1.row(perm[k]));
        for m in 0..inc.rows() {
            diff(&[pinc.at2(m, k)], &[inc.at2(m, perm[k])]);
        }
        for l in 0..agents {
            if k == l {
                continue;
            }
            let new = index.position(k, l).unwrap();
            let old = index.position(perm[k], perm[l]).unwrap();
            diff(pze.row(new), ze.row(old));
        }
    }
    diff(pzh.data(), zh.data());
    err
}

/// Random crowd with discs and walls, agents starting clear of every obstacle.
pub fn random_obstacle_config(rng: &mut RngStream, seed: u64) -> SimConfig {
    let n = 2 + (rng.uniform() * 5.0) as usize;
    let mut obstacles = Vec::new();
    for _ in 0..1 + (rng.uniform() * 3.0) as usize {
        let c = [rng.uniform() * 16.0 - 8.0, rng.uniform() * 16.0 - 8.0];
        if rng.uniform() < 0.5 {
            obstacles.push(Obstacle::Disc {
                center: c,
                radius: 0.3 + rng.uniform() * 1.5,
            });
        } else {
            let t = rng.uniform() * std::f64::consts::PI;
            let h = 0.5 + rng.uniform() * 3.0;
            obstacles.push(Obstacle::Segment {
                a: [c[0] - h * t.cos(), c[1] - h * t.sin()],
                b: [c[0] + h * t.cos(), c[1] + h * t.sin()],
            });
        }
    }
    let mut positions = Vec::new();
    while positions.len() < n {
        let p = [rng.uniform() * 20.0 - 10.0, rng.uniform() * 20.0 - 10.0];
        if obstacles.iter().all(|o| o.distance(p) > 0.2) {
            positions.push(p);
        }
    }
    let goals = (0..n).map(|_| [rng.uniform() * 30.0 - 15.0, rng.uniform() * 30.0 - 15.0]).collect();
    let half = n / 2;
    SimConfig {
        positions,
        goals,
        groups: vec![(0..half).collect(), (half..n).collect()].into_iter().filter(|g: &Vec<usize>| !g.is_empty()).collect(),
        obstacles,
        noise: rng.uniform() * 0.5,
        steps: 120,
        seed,
        ..SimConfig::default()
    }
}
