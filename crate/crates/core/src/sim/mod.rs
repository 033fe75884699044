//! Group-based social-force crowd simulator with ground-truth group
//! memberships.

mod geometry;
mod scenario;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use geometry::Obstacle;
pub use scenario::{split_scenario, split_suite, SplitParams};

use crate::data::{SceneRecord, SceneTruth, TrajectorySet, TruthSegment, Unit};
use crate::diff::RngStream;
use crate::error::{Error, Result};

/// Distance kept between an agent centre and an obstacle surface.
pub const OBSTACLE_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Initial positions, one per agent.
    pub positions: Vec<[f64; 2]>,
    /// Initial velocities; empty means all agents start at rest.
    pub velocities: Vec<[f64; 2]>,
    pub goals: Vec<[f64; 2]>,
    /// Partition of agent indices.
    pub groups: Vec<Vec<usize>>,
    pub obstacles: Vec<Obstacle>,
    pub desired_speed: f64,
    pub relaxation: f64,
    pub repulsion_a: f64,
    pub repulsion_b: f64,
    pub agent_radius: f64,
    pub obstacle_a: f64,
    pub obstacle_b: f64,
    pub cohesion: f64,
    pub comfort_radius: f64,
    /// Speeds are capped at this multiple of the desired speed.
    pub max_speed_factor: f64,
    /// Standard deviation of the random acceleration.
    pub noise: f64,
    pub dt: f64,
    /// Integration steps.
    pub steps: usize,
    /// Keep every this many integration states as a frame.
    pub record_every: usize,
    /// Pair separation above which a group split around an obstacle is
    /// registered.
    pub split_distance: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            positions: Vec::new(),
            velocities: Vec::new(),
            goals: Vec::new(),
            groups: Vec::new(),
            obstacles: Vec::new(),
            desired_speed: 1.2,
            relaxation: 0.5,
            repulsion_a: 2.0,
            repulsion_b: 0.5,
            agent_radius: 0.3,
            obstacle_a: 2.0,
            obstacle_b: 0.5,
            cohesion: 0.5,
            comfort_radius: 1.0,
            max_speed_factor: 1.3,
            noise: 0.0,
            dt: 0.1,
            steps: 100,
            record_every: 1,
            split_distance: 4.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn agents(&self) -> usize {
        self.positions.len()
    }

    pub fn frames(&self) -> usize {
        self.steps / self.record_every + 1
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.agents();
        if n == 0 {
            return Err(Error::Config("simulation needs at least one agent".into()));
        }
        if self.goals.len() != n {
            return Err(Error::Config(format!("{} goals for {n} agents", self.goals.len())));
        }
        if !self.velocities.is_empty() && self.velocities.len() != n {
            return Err(Error::Config(format!("{} velocities for {n} agents", self.velocities.len())));
        }
        let mut seen = vec![false; n];
        for g in &self.groups {
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::Config(format!("groups must partition agents; bad index {i}")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("groups must cover every agent".into()));
        }
        if !(self.dt > 0.0) || self.record_every == 0 || self.steps == 0 {
            return Err(Error::Config("dt, steps and record_every must be positive".into()));
        }
        if !(self.relaxation > 0.0) || !(self.repulsion_b > 0.0) || !(self.obstacle_b > 0.0) {
            return Err(Error::Config("relaxation and force ranges must be positive".into()));
        }
        let gains = [
            self.desired_speed,
            self.repulsion_a,
            self.agent_radius,
            self.obstacle_a,
            self.cohesion,
            self.comfort_radius,
            self.noise,
            self.split_distance,
        ];
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("gains must be finite and >= 0".into()));
        }
        if !(self.max_speed_factor > 0.0) {
            return Err(Error::Config("max_speed_factor must be positive".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            for o in &self.obstacles {
                if o.distance(*p) < OBSTACLE_MARGIN {
                    return Err(Error::Config(format!("agent {i} starts inside an obstacle")));
                }
            }
        }
        Ok(())
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Acceleration of every agent for the current state.
fn forces(cfg: &SimConfig, x: &[[f64; 2]], v: &[[f64; 2]], groups: &[Vec<usize>], rng: &mut RngStream) -> Vec<[f64; 2]> {
    let n = x.len();
    let mut a = vec![[0.0; 2]; n];
    for i in 0..n {
        let to_goal = sub(cfg.goals[i], x[i]);
        let d = norm(to_goal);
        let desired = if d > 1e-9 {
            [cfg.desired_speed * to_goal[0] / d, cfg.desired_speed * to_goal[1] / d]
        } else {
            [0.0, 0.0]
        };
        a[i][0] += (desired[0] - v[i][0]) / cfg.relaxation;
        a[i][1] += (desired[1] - v[i][1]) / cfg.relaxation;

        if cfg.repulsion_a > 0.0 {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let r = sub(x[i], x[j]);
                let dist = norm(r);
                if dist < 1e-12 {
                    continue;
                }
                let f = cfg.repulsion_a * ((2.0 * cfg.agent_radius - dist) / cfg.repulsion_b).exp();
                a[i][0] += f * r[0] / dist;
                a[i][1] += f * r[1] / dist;
            }
        }

        if cfg.obstacle_a > 0.0 {
            if let Some((dist, dir)) = cfg
                .obstacles
                .iter()
                .map(|o| o.away(x[i]))
                .min_by(|p, q| p.0.total_cmp(&q.0))
            {
                let f = cfg.obstacle_a * ((cfg.agent_radius - dist) / cfg.obstacle_b).exp();
                a[i][0] += f * dir[0];
                a[i][1] += f * dir[1];
            }
        }
    }

    if cfg.cohesion > 0.0 {
        for g in groups.iter().filter(|g| g.len() > 1) {
            let mut c = [0.0, 0.0];
            for &i in g {
                c[0] += x[i][0];
                c[1] += x[i][1];
            }
            c[0] /= g.len() as f64;
            c[1] /= g.len() as f64;
            for &i in g {
                let r = sub(c, x[i]);
                if norm(r) > cfg.comfort_radius {
                    a[i][0] += cfg.cohesion * r[0];
                    a[i][1] += cfg.cohesion * r[1];
                }
            }
        }
    }

    if cfg.noise > 0.0 {
        for ai in a.iter_mut() {
            ai[0] += cfg.noise * rng.normal();
            ai[1] += cfg.noise * rng.normal();
        }
    }
    a
}

/// Split groups whose members ended up on opposite sides of an obstacle.
/// Returns whether any group changed.
fn detect_splits(cfg: &SimConfig, x: &[[f64; 2]], v: &[[f64; 2]], groups: &mut Vec<Vec<usize>>) -> bool {
    let mut changed = false;
    let mut next = Vec::with_capacity(groups.len());
    for g in groups.iter() {
        let mut blocker = None;
        'pairs: for (k, &i) in g.iter().enumerate() {
            for &j in &g[k + 1..] {
                if norm(sub(x[i], x[j])) <= cfg.split_distance {
                    continue;
                }
                if let Some(o) = cfg.obstacles.iter().find(|o| o.blocks(x[i], x[j])) {
                    blocker = Some(o);
                    break 'pairs;
                }
            }
        }
        let Some(o) = blocker else {
            next.push(g.clone());
            continue;
        };
        let m = g.len() as f64;
        let mut heading = [0.0, 0.0];
        let mut centroid = [0.0, 0.0];
        for &i in g {
            heading[0] += v[i][0] / m;
            heading[1] += v[i][1] / m;
            centroid[0] += x[i][0] / m;
            centroid[1] += x[i][1] / m;
        }
        if norm(heading) < 1e-9 {
            let mut goal = [0.0, 0.0];
            for &i in g {
                goal[0] += cfg.goals[i][0] / m;
                goal[1] += cfg.goals[i][1] / m;
            }
            heading = sub(goal, centroid);
        }
        let c = o.anchor();
        let (left, right): (Vec<usize>, Vec<usize>) = g.iter().partition(|&&i| {
            let r = sub(x[i], c);
            heading[0] * r[1] - heading[1] * r[0] > 0.0
        });
        if left.is_empty() || right.is_empty() {
            next.push(g.clone());
        } else {
            next.push(left);
            next.push(right);
            changed = true;
        }
    }
    *groups = next;
    changed
}

fn truth_rows(groups: &[Vec<usize>], n: usize) -> Vec<Vec<u8>> {
    groups
        .iter()
        .filter(|g| g.len() > 1)
        .map(|g| {
            let mut row = vec![0u8; n];
            for &i in g {
                row[i] = 1;
            }
            row
        })
        .collect()
}

/// Full simulator output: recorded frames, per-step speeds for sanity
/// checks and the minimum agent-obstacle distance seen.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub scene: SceneRecord,
    /// Every integration state, `steps + 1` entries of `N` positions.
    pub states: Vec<Vec<[f64; 2]>>,
    pub max_speed: f64,
    pub min_obstacle_distance: f64,
    /// Integration steps at which groups split.
    pub split_steps: Vec<usize>,
}

/// Integrate the scene: `x += v dt + a dt^2 / 2`, then `v += a dt`, with the
/// speed capped and obstacle surfaces enforced.
pub fn simulate_run(cfg: &SimConfig, id: &str) -> Result<SimRun> {
    cfg.validate()?;
    let n = cfg.agents();
    let mut rng = RngStream::new(cfg.seed);
    let mut x = cfg.positions.clone();
    let mut v = if cfg.velocities.is_empty() {
        vec![[0.0; 2]; n]
    } else {
        cfg.velocities.clone()
    };
    let mut groups = cfg.groups.clone();
    let vmax = cfg.max_speed_factor * cfg.desired_speed;
    let dt = cfg.dt;

    let mut states = vec![x.clone()];
    let mut segments: Vec<(usize, Vec<Vec<u8>>)> = vec![(0, truth_rows(&groups, n))];
    let mut split_steps = Vec::new();
    let mut max_speed = v.iter().map(|&s| norm(s)).fold(0.0, f64::max);
    let mut min_obstacle_distance = f64::INFINITY;

    for step in 1..=cfg.steps {
        let a = forces(cfg, &x, &v, &groups, &mut rng);
        for i in 0..n {
            let old = x[i];
            x[i][0] += v[i][0] * dt + 0.5 * a[i][0] * dt * dt;
            x[i][1] += v[i][1] * dt + 0.5 * a[i][1] * dt * dt;
            v[i][0] += a[i][0] * dt;
            v[i][1] += a[i][1] * dt;
            let s = norm(v[i]);
            if s > vmax {
                v[i][0] *= vmax / s;
                v[i][1] *= vmax / s;
            }
            for o in &cfg.obstacles {
                o.enforce(old, &mut x[i], &mut v[i], OBSTACLE_MARGIN);
            }
            max_speed = max_speed.max(norm(v[i]));
            for o in &cfg.obstacles {
                min_obstacle_distance = min_obstacle_distance.min(o.distance(x[i]));
            }
        }
        if !x.iter().flatten().all(|c| c.is_finite()) {
            return Err(Error::Validation(format!("simulation diverged at step {step}")));
        }
        states.push(x.clone());
        if detect_splits(cfg, &x, &v, &mut groups) {
            split_steps.push(step);
            // first frame recorded at or after the split
            let frame = step.div_ceil(cfg.record_every);
            let rows = truth_rows(&groups, n);
            if segments.last().is_some_and(|s| s.0 == frame) {
                segments.last_mut().unwrap().1 = rows;
            } else {
                segments.push((frame, rows));
            }
        }
    }

    let frames = cfg.frames();
    segments.retain(|s| s.0 < frames);
    let truth = SceneTruth {
        segments: segments
            .iter()
            .enumerate()
            .map(|(k, (f, rows))| TruthSegment {
                start: f + 1,
                end: segments.get(k + 1).map_or(frames, |s| s.0),
                incidence: rows.clone(),
            })
            .collect(),
    };
    let mut pos = Vec::with_capacity(n * frames * 2);
    for i in 0..n {
        for f in 0..frames {
            pos.extend_from_slice(&states[f * cfg.record_every][i]);
        }
    }
    let ts = TrajectorySet::new(n, frames, pos, dt * cfg.record_every as f64, Unit::Meters)?;
    truth.validate(n, frames)?;
    let mut scene = SceneRecord::new(id, ts);
    scene.truth = Some(truth);
    Ok(SimRun {
        scene,
        states,
        max_speed,
        min_obstacle_distance,
        split_steps,
    })
}

pub fn simulate(cfg: &SimConfig, id: &str) -> Result<SceneRecord> {
    Ok(simulate_run(cfg, id)?.scene)
}

/// Suite description read by the `simulate` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub scenes: usize,
    pub seed: u64,
    pub split: SplitParams,
    /// Optional explicit scenes simulated in addition to the suite.
    pub custom: Vec<SimConfig>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            scenes: 500,
            seed: 0,
            split: SplitParams::default(),
            custom: Vec::new(),
        }
    }
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn generate(&self) -> Result<Vec<SceneRecord>> {
        let mut out = split_suite(self.scenes, self.seed, &self.split)?;
        for (k, c) in self.custom.iter().enumerate() {
            out.push(simulate(c, &format!("custom-{k:04}"))?);
        }
        Ok(out)
    }
}
