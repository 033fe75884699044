use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Meters,
    Pixels,
}

/// Positions of `N` agents over `T` steps, agent-major: entry `(i, t)` lives
/// at `positions[(i * T + t) * 2..][..2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    agents: usize,
    steps: usize,
    positions: Vec<f64>,
    pub dt: f64,
    pub unit: Unit,
}

impl TrajectorySet {
    pub fn new(agents: usize, steps: usize, positions: Vec<f64>, dt: f64, unit: Unit) -> Result<Self> {
        if agents < 1 {
            return Err(Error::Validation("a scene needs at least one agent".into()));
        }
        if steps < 2 {
            return Err(Error::Validation(format!("a scene needs at least 2 steps, got {steps}")));
        }
        if positions.len() != agents * steps * 2 {
            return Err(Error::dim("TrajectorySet positions", agents * steps * 2, positions.len()));
        }
        if let Some(k) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite coordinate for agent {} at step {}",
                k / 2 / steps,
                (k / 2) % steps
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive, got {dt}")));
        }
        Ok(TrajectorySet {
            agents,
            steps,
            positions,
            dt,
            unit,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn pos(&self, agent: usize, step: usize) -> [f64; 2] {
        let k = (agent * self.steps + step) * 2;
        [self.positions[k], self.positions[k + 1]]
    }

    /// Agent-major `N x len x 2` block of steps `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Vec<f64> {
        assert!(start + len <= self.steps, "window past end of scene");
        let mut out = Vec::with_capacity(self.agents * len * 2);
        for i in 0..self.agents {
            let k = (i * self.steps + start) * 2;
            out.extend_from_slice(&self.positions[k..k + len * 2]);
        }
        out
    }

    /// Scene with agents reordered so new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> TrajectorySet {
        assert_eq!(perm.len(), self.agents);
        let mut positions = Vec::with_capacity(self.positions.len());
        for &src in perm {
            let k = src * self.steps * 2;
            positions.extend_from_slice(&self.positions[k..k + self.steps * 2]);
        }
        TrajectorySet {
            positions,
            ..self.clone()
        }
    }

    pub(crate) fn map_positions(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> TrajectorySet {
        let positions = self
            .positions
            .chunks(2)
            .flat_map(|p| f([p[0], p[1]]))
            .collect();
        TrajectorySet {
            positions,
            ..self.clone()
        }
    }
}
