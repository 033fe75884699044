use serde::{Deserialize, Serialize};

use super::trajectory::TrajectorySet;

/// Affine map applied to a scene: `normalized = (x - translation) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub translation: [f64; 2],
    pub scale: f64,
}

impl Default for NormalizationRecord {
    fn default() -> Self {
        NormalizationRecord {
            translation: [0.0, 0.0],
            scale: 1.0,
        }
    }
}

impl NormalizationRecord {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.translation[0]) / self.scale,
            (p[1] - self.translation[1]) / self.scale,
        ]
    }

    pub fn invert(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.scale + self.translation[0],
            p[1] * self.scale + self.translation[1],
        ]
    }

    /// Invert a flat `[x0, y0, x1, y1, ...]` buffer in place.
    pub fn invert_flat(&self, xy: &mut [f64]) {
        for p in xy.chunks_mut(2) {
            let q = self.invert([p[0], p[1]]);
            p.copy_from_slice(&q);
        }
    }
}

/// Centre the scene on the mean position over its first `history` steps and
/// divide by the RMS distance of those positions from that mean. A degenerate
/// scene (all history positions identical) keeps scale 1.
pub fn normalize_scene(ts: &TrajectorySet, history: usize) -> (TrajectorySet, NormalizationRecord) {
    let h = history.clamp(1, ts.steps());
    let n = (ts.agents() * h) as f64;
    let mut mean = [0.0, 0.0];
    for i in 0..ts.agents() {
        for t in 0..h {
            let p = ts.pos(i, t);
            mean[0] += p[0];
            mean[1] += p[1];
        }
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut sq = 0.0;
    for i in 0..ts.agents() {
        for t in 0..h {
            let p = ts.pos(i, t);
            sq += (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2);
        }
    }
    let rms = (sq / n).sqrt();
    let scale = if rms > 1e-12 { rms } else { 1.0 };
    let rec = NormalizationRecord {
        translation: mean,
        scale,
    };
    (ts.map_positions(|p| rec.apply(p)), rec)
}

pub fn denormalize_scene(ts: &TrajectorySet, rec: &NormalizationRecord) -> TrajectorySet {
    ts.map_positions(|p| rec.invert(p))
}
