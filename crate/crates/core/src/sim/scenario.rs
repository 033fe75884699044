use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{simulate_run, Obstacle, SimConfig};
use crate::data::SceneRecord;
use crate::diff::RngStream;
use crate::error::{Error, Result};

/// Knobs of the obstacle-split scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    pub agents: usize,
    /// Recorded frames per scene.
    pub frames: usize,
    pub record_every: usize,
    pub dt: f64,
    /// Distance from the front rank to the obstacle centre.
    pub obstacle_distance: f64,
    pub obstacle_radius: f64,
    /// Spacing between neighbours in the starting formation.
    pub spacing: f64,
    pub jitter: f64,
    pub goal_distance: f64,
    /// Lateral offset of the two sub-goals.
    pub goal_spread: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub noise: f64,
    /// Regenerations allowed when a draw does not split exactly once.
    pub max_attempts: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            agents: 8,
            frames: 20,
            record_every: 4,
            dt: 0.1,
            obstacle_distance: 6.0,
            obstacle_radius: 2.0,
            spacing: 0.9,
            jitter: 0.15,
            goal_distance: 20.0,
            goal_spread: 3.0,
            speed_min: 1.0,
            speed_max: 1.4,
            noise: 0.05,
            max_attempts: 20,
        }
    }
}

fn rotate(p: [f64; 2], c: f64, s: f64, t: [f64; 2]) -> [f64; 2] {
    [c * p[0] - s * p[1] + t[0], s * p[0] + c * p[1] + t[1]]
}

/// One group walking at a disc obstacle; the half of the group on each
/// side heads for its own sub-goal beyond it.
pub fn split_scenario(n_agents: usize, rng: &mut RngStream, params: &SplitParams) -> Result<SimConfig> {
    if n_agents < 4 {
        return Err(Error::Config(format!("split scenario needs at least 4 agents, got {n_agents}")));
    }
    let mut files = n_agents.div_ceil(2);
    if files % 2 == 1 {
        files += 1;
    }
    let files = files.min(n_agents);
    let speed = params.speed_min + (params.speed_max - params.speed_min) * rng.uniform();
    let theta = 2.0 * std::f64::consts::PI * rng.uniform();
    let (c, s) = (theta.cos(), theta.sin());
    let shift = [10.0 * (rng.uniform() - 0.5), 10.0 * (rng.uniform() - 0.5)];

    let mut local = Vec::with_capacity(n_agents);
    for k in 0..n_agents {
        let rank = k / files;
        let file = k % files;
        let y = (file as f64 - (files as f64 - 1.0) / 2.0) * params.spacing;
        let x = -(rank as f64) * params.spacing;
        local.push([
            x + params.jitter * (2.0 * rng.uniform() - 1.0),
            y + params.jitter * (2.0 * rng.uniform() - 1.0),
        ]);
    }
    let obstacle = [
        params.obstacle_distance + (rng.uniform() - 0.5),
        0.6 * (rng.uniform() - 0.5),
    ];
    let positions = local.iter().map(|&p| rotate(p, c, s, shift)).collect();
    let goals = local
        .iter()
        .map(|p| {
            let side = if p[1] >= obstacle[1] { 1.0 } else { -1.0 };
            rotate([params.goal_distance, side * params.goal_spread], c, s, shift)
        })
        .collect();
    Ok(SimConfig {
        positions,
        velocities: vec![[speed * c, speed * s]; n_agents],
        goals,
        groups: vec![(0..n_agents).collect()],
        obstacles: vec![Obstacle::Disc {
            center: rotate(obstacle, c, s, shift),
            radius: params.obstacle_radius,
        }],
        desired_speed: speed,
        noise: params.noise,
        dt: params.dt,
        steps: (params.frames - 1) * params.record_every,
        record_every: params.record_every,
        seed: rng.next_u64(),
        ..SimConfig::default()
    })
}

/// `count` split scenes with ids `split-0000`, ... Each scene is redrawn
/// until its truth has exactly two segments.
pub fn split_suite(count: usize, seed: u64, params: &SplitParams) -> Result<Vec<SceneRecord>> {
    let root = RngStream::new(seed);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = root.derive(k as u64);
        let id = format!("split-{k:04}");
        let mut found = None;
        for _ in 0..params.max_attempts.max(1) {
            let cfg = split_scenario(params.agents, &mut rng, params)?;
            let run = simulate_run(&cfg, &id)?;
            let truth = run.scene.truth.as_ref().expect("simulator emits truth");
            if truth.segments.len() == 2 && truth.segments[1].incidence.len() == 2 {
                found = Some(run.scene);
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            Error::Validation(format!("{id}: no split within {} attempts", params.max_attempts))
        })?);
    }
    Ok(out)
}
