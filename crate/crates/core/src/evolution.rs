//! Relation evolution across sliding windows and the window loop shared by
//! training and prediction.

use serde::{Deserialize, Serialize};

use crate::data::{make_window_plan, normalize_scene, TrajectorySet, Window};
use crate::diff::{Activation, Graph, GruCell, MlpBlock, ParamStore, RngStream, Tensor, Var};
use crate::encoder::{EdgeIndex, IncidenceState};
use crate::error::{Error, Result};
use crate::model::{Branches, Model, ModelConfig};

#[derive(Clone, Debug)]
pub struct Evolution {
    graph_gru: GruCell,
    graph_readout: MlpBlock,
    hyper_gru: GruCell,
    hyper_readout: MlpBlock,
    gru_hidden: usize,
    residual: bool,
}

/// Recurrent hidden states threaded between windows. `None` means the
/// zero state.
#[derive(Clone, Copy, Debug, Default)]
pub struct EvolutionState {
    pub graph: Option<Var>,
    pub hyper: Option<Var>,
    pub beta: usize,
}

impl EvolutionState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Evolved logits and their softmax distributions `q(z')`.
#[derive(Clone, Copy, Debug)]
pub struct EvolvedRelations {
    pub edge_logits: Option<Var>,
    pub hyper_logits: Option<Var>,
    pub edge_q: Option<Var>,
    pub hyper_q: Option<Var>,
}

impl Evolution {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let dh = cfg.gru_hidden;
        let graph_gru = GruCell::new(store, "evolve.graph.gru", cfg.edge_types, dh, rng);
        let graph_readout = MlpBlock::new(
            store,
            "evolve.graph.readout",
            &[dh, cfg.edge_types],
            &[Activation::None],
            rng,
        )?;
        let hyper_gru = GruCell::new(store, "evolve.hyper.gru", cfg.hyperedge_types, dh, rng);
        let hyper_readout = MlpBlock::new(
            store,
            "evolve.hyper.readout",
            &[dh, cfg.hyperedge_types],
            &[Activation::None],
            rng,
        )?;
        Ok(Evolution {
            graph_gru,
            graph_readout,
            hyper_gru,
            hyper_readout,
            gru_hidden: dh,
            residual: cfg.residual_evolution,
        })
    }

    pub fn param_ids(&self) -> Vec<crate::diff::ParamId> {
        let mut ids = self.graph_gru.param_ids();
        ids.extend(self.graph_readout.param_ids());
        ids.extend(self.hyper_gru.param_ids());
        ids.extend(self.hyper_readout.param_ids());
        ids
    }

    fn step_one(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        gru: &GruCell,
        readout: &MlpBlock,
        logits: Var,
        hidden: Option<Var>,
    ) -> Result<(Var, Var)> {
        let rows = g.value(logits).rows();
        let h = match hidden {
            Some(h) => {
                if g.value(h).rows() != rows {
                    return Err(Error::dim("evolution hidden rows", rows, g.value(h).rows()));
                }
                h
            }
            None => g.constant(Tensor::zeros(&[rows, self.gru_hidden])),
        };
        let h_next = gru.step(g, store, logits, h)?;
        let out = readout.forward(g, store, h_next)?;
        let evolved = if self.residual { g.add(logits, out) } else { out };
        Ok((evolved, h_next))
    }

    /// One recurrent update of the relation logits.
    pub fn evolve(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        edge_logits: Option<Var>,
        hyper_logits: Option<Var>,
        state: &EvolutionState,
    ) -> Result<(EvolvedRelations, EvolutionState)> {
        let mut next = EvolutionState {
            graph: state.graph,
            hyper: state.hyper,
            beta: state.beta + 1,
        };
        let (edge_logits, edge_q) = match edge_logits {
            Some(l) => {
                let (e, h) =
                    self.step_one(g, store, &self.graph_gru, &self.graph_readout, l, state.graph)?;
                next.graph = Some(h);
                (Some(e), Some(g.softmax(e)))
            }
            None => (None, None),
        };
        let (hyper_logits, hyper_q) = match hyper_logits {
            Some(l) => {
                let (e, h) =
                    self.step_one(g, store, &self.hyper_gru, &self.hyper_readout, l, state.hyper)?;
                next.hyper = Some(h);
                (Some(e), Some(g.softmax(e)))
            }
            None => (None, None),
        };
        Ok((
            EvolvedRelations {
                edge_logits,
                hyper_logits,
                edge_q,
                hyper_q,
            },
            next,
        ))
    }
}

/// How decoded positions feed later encoder windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Continuation {
    /// Detached Gaussian means.
    Means,
    /// Random-walk samples `x_{t+1} ~ N(x_t + dx_t, var * I)` drawn from the
    /// noise stream.
    Sample,
}

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    pub branches: Branches,
    pub hard: bool,
    /// Per window: encode ground truth instead of model output (ignored for
    /// window 0). Missing entries mean `false`.
    pub teacher: Vec<bool>,
    pub continuation: Continuation,
}

/// One window of the loop.
#[derive(Clone, Debug)]
pub struct WindowOutput {
    pub window: Window,
    /// Encoder input, agent-major `N x T_h x 2`.
    pub encoder_input: Vec<f64>,
    pub start: Vec<f64>,
    /// `N x (steps * 2)` position means.
    pub means: Var,
    pub steps: usize,
    /// Relations were inferred (not reused) in this window.
    pub fresh: bool,
    pub edge_q: Option<Var>,
    pub hyper_q: Option<Var>,
    pub edge_z: Option<Var>,
    pub hyper_z: Option<Var>,
    pub incidence: Option<IncidenceState>,
}

#[derive(Clone, Debug)]
pub struct RolloutTrace {
    pub windows: Vec<WindowOutput>,
    /// Continuation positions for the future, agent-major `N x T_f x 2`.
    pub future: Vec<f64>,
}

/// Run every window for one (normalized) scene. `observed` holds at least
/// `T_h` steps; teacher forcing needs `T_h + T_f`.
pub fn run_windows(
    model: &Model,
    g: &mut Graph,
    observed: &TrajectorySet,
    opts: &RolloutOptions,
    mut noise: Option<&mut RngStream>,
) -> Result<RolloutTrace> {
    let cfg = &model.config;
    let spec = cfg.horizon;
    let plan = make_window_plan(spec)?;
    let n = observed.agents();
    let th = spec.history;
    let total = spec.total();
    let t_obs = observed.steps();
    if t_obs < th {
        return Err(Error::Validation(format!(
            "scene has {t_obs} steps, history needs {th}"
        )));
    }
    let wants_truth = opts.teacher.iter().skip(1).any(|&t| t);
    if wants_truth && t_obs < total {
        return Err(Error::Validation(format!(
            "teacher forcing needs {total} steps, scene has {t_obs}"
        )));
    }
    let branches = opts.branches;
    let enc = &model.encoder;
    let store = &model.store;
    let index = EdgeIndex::complete(n);

    let mut pred = vec![0.0; n * total * 2];
    let mut state = EvolutionState::new();
    let mut reused: Option<(Option<Var>, Option<Var>, Option<Var>, Option<Var>, Option<IncidenceState>)> =
        None;
    let mut windows = Vec::with_capacity(plan.windows.len());

    for win in &plan.windows {
        let beta = win.index;
        let teacher = beta > 0 && opts.teacher.get(beta).copied().unwrap_or(false);
        let mut input = Vec::with_capacity(n * th * 2);
        for i in 0..n {
            for t in win.encode.clone() {
                let p = if t < th || teacher {
                    observed.pos(i, t)
                } else {
                    [pred[(i * total + t) * 2], pred[(i * total + t) * 2 + 1]]
                };
                input.extend_from_slice(&p);
            }
        }
        let start: Vec<f64> = (0..n)
            .flat_map(|i| {
                let o = (i * th + th - 1) * 2;
                [input[o], input[o + 1]]
            })
            .collect();

        let fresh = branches.dynamic || reused.is_none();
        let (v1, edge_q, hyper_q, edge_z, hyper_z, incidence) = if fresh {
            let s = enc.encode_structure(g, store, &input, n, branches, noise.as_deref_mut(), opts.hard)?;
            let (logits_e, logits_h, q_e, q_h) = if branches.dynamic {
                let (ev, next) = model.evolution.evolve(g, store, s.edge_logits, s.hyper_logits, &state)?;
                state = next;
                (ev.edge_logits, ev.hyper_logits, ev.edge_q, ev.hyper_q)
            } else {
                let q_e = s.edge_logits.map(|l| g.softmax(l));
                let q_h = s.hyper_logits.map(|l| g.softmax(l));
                (s.edge_logits, s.hyper_logits, q_e, q_h)
            };
            let rel = enc.type_relations(g, logits_e, logits_h, noise.as_deref_mut(), opts.hard)?;
            if !branches.dynamic {
                reused = Some((q_e, q_h, rel.edge, rel.hyper, s.incidence));
            }
            (s.nodes.v1, q_e, q_h, rel.edge, rel.hyper, s.incidence)
        } else {
            let (q_e, q_h, z_e, z_h, inc) = reused.expect("relations from window 0");
            let v_self = enc.embed_history(g, store, &input, n)?;
            let (_, nodes) = enc.pairwise_rounds(g, store, v_self, &index)?;
            (nodes.v1, q_e, q_h, z_e, z_h, inc)
        };

        let agg = model.decoder.aggregate(
            g,
            store,
            &index,
            v1,
            edge_z,
            hyper_z,
            incidence.map(|s| s.sample),
        )?;
        let steps = win.decode_len();
        let roll = model.decoder.rollout(g, store, agg.nodes, &start, steps)?;

        let means = g.value(roll.means).clone();
        let sigma = model.config.variance.sqrt();
        for i in 0..n {
            let mut prev = [start[2 * i], start[2 * i + 1]];
            let mut mean_prev = prev;
            for s in 0..steps {
                let m = [means.at2(i, 2 * s), means.at2(i, 2 * s + 1)];
                let p = match (opts.continuation, noise.as_deref_mut()) {
                    (Continuation::Sample, Some(r)) => [
                        prev[0] + (m[0] - mean_prev[0]) + sigma * r.normal(),
                        prev[1] + (m[1] - mean_prev[1]) + sigma * r.normal(),
                    ],
                    (Continuation::Sample, None) => [
                        prev[0] + (m[0] - mean_prev[0]),
                        prev[1] + (m[1] - mean_prev[1]),
                    ],
                    (Continuation::Means, _) => m,
                };
                let t = win.decode.start + s;
                pred[(i * total + t) * 2] = p[0];
                pred[(i * total + t) * 2 + 1] = p[1];
                prev = p;
                mean_prev = m;
            }
        }

        windows.push(WindowOutput {
            window: win.clone(),
            encoder_input: input,
            start,
            means: roll.means,
            steps,
            fresh,
            edge_q,
            hyper_q,
            edge_z,
            hyper_z,
            incidence,
        });
    }

    let tf = spec.future;
    let mut future = Vec::with_capacity(n * tf * 2);
    for i in 0..n {
        future.extend_from_slice(&pred[(i * total + th) * 2..(i * total + total) * 2]);
    }
    Ok(RolloutTrace { windows, future })
}

/// Relation structures of one window in plain arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRelations {
    pub window: usize,
    /// 1-based inclusive frames covered by the encoder input.
    pub encode_frames: (usize, usize),
    /// `E x L_CG` rows of `q(z')` in receiver-major edge order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_types: Option<Vec<Vec<f64>>>,
    /// `M x L_HG` rows of `q(z')`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper_types: Option<Vec<Vec<f64>>>,
    /// Membership probabilities `M x N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence_probs: Option<Vec<Vec<f64>>>,
    /// Sampled incidence `M x N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence: Option<Vec<Vec<f64>>>,
}

fn rows_of(g: &Graph, v: Var) -> Vec<Vec<f64>> {
    let t = g.value(v);
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Plain-array copy of the relations in a trace.
pub fn relations_of(g: &Graph, trace: &RolloutTrace) -> Vec<WindowRelations> {
    trace
        .windows
        .iter()
        .map(|w| WindowRelations {
            window: w.window.index,
            encode_frames: w.window.encode_one_based(),
            edge_types: w.edge_q.map(|v| rows_of(g, v)),
            hyper_types: w.hyper_q.map(|v| rows_of(g, v)),
            incidence_probs: w.incidence.map(|s| rows_of(g, s.probs)),
            incidence: w.incidence.map(|s| rows_of(g, s.sample)),
        })
        .collect()
}

/// `K` sampled futures for one scene, in the scene's original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub scene_id: String,
    pub agents: usize,
    pub history: usize,
    pub future: usize,
    /// `K` entries, each agent-major `N x T_f x 2`.
    pub samples: Vec<Vec<f64>>,
    /// Per sample, per window.
    pub relations: Vec<Vec<WindowRelations>>,
    /// Relations inferred from the observed future, when the scene had one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_relations: Option<Vec<WindowRelations>>,
}

impl PredictionBundle {
    pub fn k(&self) -> usize {
        self.samples.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: PredictionBundle = serde_json::from_str(s)?;
        if b.samples.is_empty() {
            return Err(Error::Validation("prediction bundle has no samples".into()));
        }
        let len = b.agents * b.future * 2;
        if b.samples.iter().any(|s| s.len() != len) {
            return Err(Error::Validation("prediction sample length mismatch".into()));
        }
        Ok(b)
    }
}

/// Sample `k` futures from the first `T_h` steps of `scene`.
pub fn predict(
    model: &Model,
    branches: Branches,
    scene_id: &str,
    scene: &TrajectorySet,
    k: usize,
    seed: u64,
) -> Result<PredictionBundle> {
    if k < 1 {
        return Err(Error::Contract("need at least one sample".into()));
    }
    let spec = model.config.horizon;
    if scene.steps() < spec.history {
        return Err(Error::Validation(format!(
            "scene {scene_id} has {} steps, history needs {}",
            scene.steps(),
            spec.history
        )));
    }
    let history = scene.window(0, spec.history);
    let history = TrajectorySet::new(scene.agents(), spec.history, history, scene.dt, scene.unit)?;
    let (norm, rec) = normalize_scene(&history, spec.history);
    let opts = RolloutOptions {
        branches,
        hard: true,
        teacher: Vec::new(),
        continuation: Continuation::Sample,
    };
    let root = RngStream::new(seed);
    let mut samples = Vec::with_capacity(k);
    let mut relations = Vec::with_capacity(k);
    for s in 0..k {
        let mut rng = root.derive(s as u64);
        let mut g = Graph::new();
        let trace = run_windows(model, &mut g, &norm, &opts, Some(&mut rng))?;
        let mut fut = trace.future.clone();
        rec.invert_flat(&mut fut);
        samples.push(fut);
        relations.push(relations_of(&g, &trace));
    }
    Ok(PredictionBundle {
        scene_id: scene_id.to_string(),
        agents: scene.agents(),
        history: spec.history,
        future: spec.future,
        samples,
        relations,
        truth_relations: None,
    })
}

/// Relations inferred from ground-truth windows with frozen noise and hard
/// samples; `scene` must hold `T_h + T_f` steps.
pub fn relations_on_truth(
    model: &Model,
    branches: Branches,
    scene: &TrajectorySet,
) -> Result<Vec<WindowRelations>> {
    let spec = model.config.horizon;
    let (norm, _) = normalize_scene(scene, spec.history);
    let windows = spec.window_count();
    let opts = RolloutOptions {
        branches,
        hard: true,
        teacher: vec![true; windows],
        continuation: Continuation::Means,
    };
    let mut g = Graph::new();
    let trace = run_windows(model, &mut g, &norm, &opts, None)?;
    Ok(relations_of(&g, &trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{HorizonSpec, Unit};
    use crate::model::AblationMode;

    fn model(residual: bool) -> Model {
        Model::new(
            ModelConfig {
                hidden: 5,
                gru_hidden: 3,
                max_hyperedges: 2,
                residual_evolution: residual,
                horizon: HorizonSpec::new(4, 6, 2).unwrap(),
                ..ModelConfig::default()
            },
            11,
        )
        .unwrap()
    }

    fn scene(n: usize, t: usize, seed: u64) -> TrajectorySet {
        let mut r = RngStream::new(seed);
        let mut p = Vec::new();
        for _ in 0..n {
            let (mut x, mut y) = (r.normal(), r.normal());
            let (vx, vy) = (0.3 * r.normal(), 0.3 * r.normal());
            for _ in 0..t {
                p.extend_from_slice(&[x, y]);
                x += vx + 0.01 * r.normal();
                y += vy + 0.01 * r.normal();
            }
        }
        TrajectorySet::new(n, t, p, 0.4, Unit::Meters).unwrap()
    }

    fn zero_evolution(m: &mut Model) {
        for id in m.evolution.param_ids() {
            m.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_parameters_give_uniform_without_residual() {
        let mut m = model(false);
        zero_evolution(&mut m);
        let mut g = Graph::new();
        let l = g.constant(Tensor::matrix(3, 2, vec![4.0, -1.0, 0.2, 0.3, 9.0, 0.0]).unwrap());
        let (ev, next) = m
            .evolution
            .evolve(&mut g, &m.store, Some(l), None, &EvolutionState::new())
            .unwrap();
        assert!(g.value(ev.edge_q.unwrap()).data().iter().all(|&q| q == 0.5));
        assert_eq!(next.beta, 1);
        assert!(g.value(next.graph.unwrap()).data().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn evolved_rows_are_simplex_and_threading_is_sequential() {
        let m = model(true);
        let mut g = Graph::new();
        let mut r = RngStream::new(3);
        let l1 = g.constant(Tensor::matrix(4, 2, (0..8).map(|_| r.normal()).collect()).unwrap());
        let l2 = g.constant(Tensor::matrix(4, 2, (0..8).map(|_| r.normal()).collect()).unwrap());
        let (a1, s1) = m.evolution.evolve(&mut g, &m.store, None, Some(l1), &EvolutionState::new()).unwrap();
        let (a2, s2) = m.evolution.evolve(&mut g, &m.store, None, Some(l2), &s1).unwrap();
        for q in [a1.hyper_q.unwrap(), a2.hyper_q.unwrap()] {
            let t = g.value(q);
            for i in 0..t.rows() {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let (b1, t1) = m.evolution.evolve(&mut g, &m.store, None, Some(l1), &EvolutionState::new()).unwrap();
        let (b2, t2) = m.evolution.evolve(&mut g, &m.store, None, Some(l2), &t1).unwrap();
        assert_eq!(g.value(a1.hyper_q.unwrap()), g.value(b1.hyper_q.unwrap()));
        assert_eq!(g.value(a2.hyper_q.unwrap()), g.value(b2.hyper_q.unwrap()));
        assert_eq!(g.value(s2.hyper.unwrap()), g.value(t2.hyper.unwrap()));
    }

    #[test]
    fn dynamic_first_window_matches_static_with_zero_recurrence() {
        let mut m = model(true);
        zero_evolution(&mut m);
        let sc = scene(3, 10, 4);
        let (norm, _) = normalize_scene(&sc, 4);
        let run = |mode: AblationMode| {
            let opts = RolloutOptions {
                branches: mode.branches(),
                hard: false,
                teacher: vec![],
                continuation: Continuation::Means,
            };
            let mut g = Graph::new();
            let mut r = RngStream::new(9);
            let tr = run_windows(&m, &mut g, &norm, &opts, Some(&mut r)).unwrap();
            let w = &tr.windows[0];
            (
                g.value(w.means).clone(),
                g.value(w.edge_z.unwrap()).clone(),
                g.value(w.hyper_q.unwrap()).clone(),
            )
        };
        assert_eq!(run(AblationMode::ScgShg), run(AblationMode::DcgDhg));
    }

    #[test]
    fn later_windows_mix_observed_and_predicted_steps() {
        let m = model(true);
        let sc = scene(2, 10, 5);
        let (norm, _) = normalize_scene(&sc, 4);
        let opts = RolloutOptions {
            branches: AblationMode::DcgDhg.branches(),
            hard: false,
            teacher: vec![],
            continuation: Continuation::Means,
        };
        let mut g = Graph::new();
        let tr = run_windows(&m, &mut g, &norm, &opts, None).unwrap();
        assert_eq!(tr.windows.len(), 3);
        let (th, gap) = (4usize, 2usize);
        for w in &tr.windows {
            let beta = w.window.index;
            let n_obs = th.saturating_sub(beta * gap);
            for i in 0..2 {
                for s in 0..th {
                    let t = beta * gap + s;
                    let got = [w.encoder_input[(i * th + s) * 2], w.encoder_input[(i * th + s) * 2 + 1]];
                    if s < n_obs {
                        assert_eq!(got, norm.pos(i, t));
                    } else {
                        let f = t - th;
                        assert_eq!(got, [tr.future[(i * 6 + f) * 2], tr.future[(i * 6 + f) * 2 + 1]]);
                    }
                }
            }
        }
    }

    #[test]
    fn static_mode_reuses_first_window_relations() {
        let m = model(true);
        let sc = scene(3, 10, 6);
        let (norm, _) = normalize_scene(&sc, 4);
        let opts = RolloutOptions {
            branches: AblationMode::ScgShg.branches(),
            hard: false,
            teacher: vec![],
            continuation: Continuation::Means,
        };
        let mut g = Graph::new();
        let mut r = RngStream::new(1);
        let tr = run_windows(&m, &mut g, &norm, &opts, Some(&mut r)).unwrap();
        assert!(tr.windows[0].fresh && !tr.windows[1].fresh);
        assert_eq!(tr.windows[0].edge_z, tr.windows[2].edge_z);
        assert_eq!(
            tr.windows[0].incidence.unwrap().sample,
            tr.windows[1].incidence.unwrap().sample
        );
    }

    #[test]
    fn single_window_and_bundle_shape() {
        let m = Model::new(
            ModelConfig {
                hidden: 4,
                gru_hidden: 3,
                max_hyperedges: 2,
                horizon: HorizonSpec::new(3, 2, 2).unwrap(),
                ..ModelConfig::default()
            },
            1,
        )
        .unwrap();
        let sc = scene(3, 3, 7);
        let b = predict(&m, AblationMode::DcgDhgSmSp.branches(), "s", &sc, 4, 5).unwrap();
        assert_eq!(b.k(), 4);
        assert!(b.samples.iter().all(|s| s.len() == 3 * 2 * 2));
        assert!(b.relations.iter().all(|r| r.len() == 1));
        let again = predict(&m, AblationMode::DcgDhgSmSp.branches(), "s", &sc, 4, 5).unwrap();
        assert_eq!(b, again);
        let round = PredictionBundle::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(round, b);
    }

    #[test]
    fn teacher_forcing_needs_full_scene() {
        let m = model(true);
        let sc = scene(2, 4, 8);
        let opts = RolloutOptions {
            branches: AblationMode::DcgDhg.branches(),
            hard: false,
            teacher: vec![false, true],
            continuation: Continuation::Means,
        };
        let mut g = Graph::new();
        assert!(run_windows(&m, &mut g, &sc, &opts, None).is_err());
    }
}
