//! Displacement errors over sampled futures and incidence recovery scores.

use serde::{Deserialize, Serialize};

use crate::data::{SceneTruth, TrajectorySet};
use crate::error::{Error, Result};
use crate::evolution::{PredictionBundle, WindowRelations};

/// Mean and final displacement error of one sample against the truth, both
/// agent-major `N x T x 2`, over the first `steps` steps.
fn ade_fde(truth: &[f64], sample: &[f64], agents: usize, t: usize, steps: usize) -> (f64, f64) {
    let mut ade = 0.0;
    let mut fde = 0.0;
    for i in 0..agents {
        for s in 0..steps {
            let k = (i * t + s) * 2;
            let d = (truth[k] - sample[k]).hypot(truth[k + 1] - sample[k + 1]);
            ade += d;
            if s + 1 == steps {
                fde += d;
            }
        }
    }
    (ade / (agents * steps) as f64, fde / agents as f64)
}

fn check_shapes(truth: &[f64], samples: &[Vec<f64>], agents: usize, steps: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Contract("need at least one sample".into()));
    }
    if agents == 0 || steps == 0 {
        return Err(Error::Contract("need at least one agent and one step".into()));
    }
    let len = agents * steps * 2;
    if truth.len() != len {
        return Err(Error::dim("truth trajectory", len, truth.len()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != len) {
        return Err(Error::dim("sample trajectory", len, s.len()));
    }
    Ok(())
}

/// `(minADE_K, minFDE_K)`, each minimized over samples independently.
pub fn min_ade_fde(truth: &[f64], samples: &[Vec<f64>], agents: usize, steps: usize) -> Result<(f64, f64)> {
    horizon_min_ade_fde(truth, samples, agents, steps, steps)
}

/// As [`min_ade_fde`] but only over the first `upto` steps.
pub fn horizon_min_ade_fde(
    truth: &[f64],
    samples: &[Vec<f64>],
    agents: usize,
    steps: usize,
    upto: usize,
) -> Result<(f64, f64)> {
    check_shapes(truth, samples, agents, steps)?;
    if upto == 0 || upto > steps {
        return Err(Error::Contract(format!("horizon {upto} outside 1..={steps}")));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for s in samples {
        let (a, f) = ade_fde(truth, s, agents, steps, upto);
        best.0 = best.0.min(a);
        best.1 = best.1.min(f);
    }
    Ok(best)
}

/// Fractions of the future horizon reported separately.
pub const HORIZON_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonError {
    pub fraction: f64,
    pub steps: usize,
    pub min_ade: f64,
    pub min_fde: f64,
}

pub fn horizon_grid(truth: &[f64], samples: &[Vec<f64>], agents: usize, steps: usize) -> Result<Vec<HorizonError>> {
    HORIZON_FRACTIONS
        .iter()
        .map(|&f| {
            let upto = ((f * steps as f64).ceil() as usize).clamp(1, steps);
            let (a, d) = horizon_min_ade_fde(truth, samples, agents, steps, upto)?;
            Ok(HorizonError {
                fraction: f,
                steps: upto,
                min_ade: a,
                min_fde: d,
            })
        })
        .collect()
}

/// Maximum-weight assignment of rows to distinct columns (Hungarian method
/// on the negated, zero-padded square matrix). Returns the column of each
/// row, `None` for rows left over when there are more rows than columns.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    let n = rows.max(cols);
    if n == 0 {
        return vec![None; rows];
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -w[i][j]
        } else {
            0.0
        }
    };
    // 1-based potentials formulation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidenceScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// True hyperedges whose matched predicted row overlaps them with
    /// intersection over union above one half.
    pub recovered: usize,
}

fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count() as f64;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn pair_f1(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count() as f64;
    let na = a.iter().filter(|x| **x).count() as f64;
    let nb = b.iter().filter(|x| **x).count() as f64;
    if na + nb == 0.0 {
        0.0
    } else {
        2.0 * inter / (na + nb)
    }
}

// Pair F1 with a small lexicographic tie-break on overlap and recovery, so
// equal-F1 alternatives resolve the same way whatever the row order.
fn match_weight(t: &[bool], p: &[bool], n: usize) -> f64 {
    let inter = t.iter().zip(p).filter(|(x, y)| **x && **y).count() as f64;
    let hit = if jaccard(t, p) > 0.5 { 1.0 } else { 0.0 };
    pair_f1(t, p) + 1e-7 * (inter + hit) / (n as f64 + 1.0)
}

/// Compare a predicted incidence (`M x N`, thresholded) with the truth
/// (`M_true x N`). True rows are matched to distinct non-empty predicted
/// rows maximizing summed pair F1; precision and recall count member
/// overlaps of matched pairs against all predicted and true members.
pub fn incidence_score(pred: &[Vec<f64>], truth: &[Vec<u8>], threshold: f64) -> Result<IncidenceScore> {
    let n = truth
        .first()
        .map(Vec::len)
        .or_else(|| pred.first().map(Vec::len))
        .unwrap_or(0);
    if pred.iter().any(|r| r.len() != n) || truth.iter().any(|r| r.len() != n) {
        return Err(Error::Contract("predicted and true incidence disagree on agent count".into()));
    }
    let p_sets: Vec<Vec<bool>> = pred
        .iter()
        .map(|r| r.iter().map(|&v| v > threshold).collect::<Vec<bool>>())
        .filter(|r| r.iter().any(|&b| b))
        .collect();
    let t_sets: Vec<Vec<bool>> = truth
        .iter()
        .map(|r| r.iter().map(|&v| v != 0).collect::<Vec<bool>>())
        .filter(|r| r.iter().any(|&b| b))
        .collect();
    let pred_members: usize = p_sets.iter().map(|r| r.iter().filter(|b| **b).count()).sum();
    let true_members: usize = t_sets.iter().map(|r| r.iter().filter(|b| **b).count()).sum();
    if pred_members == 0 && true_members == 0 {
        return Ok(IncidenceScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            recovered: 0,
        });
    }
    let w: Vec<Vec<f64>> = t_sets
        .iter()
        .map(|t| p_sets.iter().map(|p| match_weight(t, p, n)).collect())
        .collect();
    let assign = if p_sets.is_empty() {
        vec![None; t_sets.len()]
    } else {
        max_weight_assignment(&w)
    };
    let mut tp = 0usize;
    let mut recovered = 0;
    for (k, a) in assign.iter().enumerate() {
        if let Some(j) = *a {
            tp += t_sets[k].iter().zip(&p_sets[j]).filter(|(x, y)| **x && **y).count();
            if jaccard(&t_sets[k], &p_sets[j]) > 0.5 {
                recovered += 1;
            }
        }
    }
    let precision = if pred_members == 0 { 0.0 } else { tp as f64 / pred_members as f64 };
    let recall = if true_members == 0 { 0.0 } else { tp as f64 / true_members as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(IncidenceScore {
        precision,
        recall,
        f1,
        recovered,
    })
}

/// Membership probabilities of one window with rows whose most likely
/// hyperedge type is the null type cleared.
pub fn active_incidence(rel: &WindowRelations) -> Option<Vec<Vec<f64>>> {
    let probs = rel.incidence_probs.as_ref()?;
    let Some(types) = rel.hyper_types.as_ref() else {
        return Some(probs.clone());
    };
    Some(
        probs
            .iter()
            .zip(types)
            .map(|(row, ty)| {
                let null = ty
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .is_some_and(|(k, _)| k == 0);
                if null {
                    vec![0.0; row.len()]
                } else {
                    row.clone()
                }
            })
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    /// 1-based inclusive frame range of the truth segment.
    pub start: usize,
    pub end: usize,
    pub window: usize,
    pub true_groups: usize,
    #[serde(flatten)]
    pub score: IncidenceScore,
}

/// Score every truth segment against the last window whose final encoder
/// frame lies inside it. Segments without such a window are skipped.
pub fn score_segments(
    relations: &[WindowRelations],
    truth: &SceneTruth,
    threshold: f64,
) -> Result<Vec<SegmentScore>> {
    let mut out = Vec::new();
    for seg in &truth.segments {
        let Some(rel) = relations
            .iter().rfind(|r| seg.contains(r.encode_frames.1))
        else {
            continue;
        };
        let Some(pred) = active_incidence(rel) else {
            continue;
        };
        let score = incidence_score(&pred, &seg.incidence, threshold)?;
        out.push(SegmentScore {
            start: seg.start,
            end: seg.end,
            window: rel.window,
            true_groups: seg.incidence.iter().filter(|r| r.iter().any(|&v| v != 0)).count(),
            score,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub min_ade: f64,
    pub min_fde: f64,
    pub horizons: Vec<HorizonError>,
    #[serde(default)]
    pub segments: Vec<SegmentScore>,
}

/// Displacement metrics of `bundle` against the future of `scene`, plus
/// incidence scores when both truth groups and relations inferred on the
/// true trajectories are available.
pub fn scene_metrics(
    bundle: &PredictionBundle,
    scene: &TrajectorySet,
    truth: Option<&SceneTruth>,
    threshold: f64,
) -> Result<SceneMetrics> {
    if scene.agents() != bundle.agents || scene.steps() < bundle.history + bundle.future {
        return Err(Error::Validation(format!(
            "scene {} does not cover the predicted horizon",
            bundle.scene_id
        )));
    }
    let future = scene.window(bundle.history, bundle.future);
    let (min_ade, min_fde) = min_ade_fde(&future, &bundle.samples, bundle.agents, bundle.future)?;
    let horizons = horizon_grid(&future, &bundle.samples, bundle.agents, bundle.future)?;
    let segments = match (truth, &bundle.truth_relations) {
        (Some(t), Some(rel)) => score_segments(rel, t, threshold)?,
        _ => Vec::new(),
    };
    Ok(SceneMetrics {
        scene_id: bundle.scene_id.clone(),
        min_ade,
        min_fde,
        horizons,
        segments,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub scenes: Vec<SceneMetrics>,
    pub mean_min_ade: f64,
    pub mean_min_fde: f64,
    pub horizons: Vec<HorizonError>,
    pub mean_f1: Option<f64>,
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
}

impl MetricReport {
    pub fn from_scenes(k: usize, scenes: Vec<SceneMetrics>) -> Self {
        let n = scenes.len().max(1) as f64;
        let mean_min_ade = scenes.iter().map(|s| s.min_ade).sum::<f64>() / n;
        let mean_min_fde = scenes.iter().map(|s| s.min_fde).sum::<f64>() / n;
        let horizons = match scenes.first() {
            Some(first) => (0..first.horizons.len())
                .map(|h| HorizonError {
                    fraction: first.horizons[h].fraction,
                    steps: first.horizons[h].steps,
                    min_ade: scenes.iter().map(|s| s.horizons[h].min_ade).sum::<f64>() / n,
                    min_fde: scenes.iter().map(|s| s.horizons[h].min_fde).sum::<f64>() / n,
                })
                .collect(),
            None => Vec::new(),
        };
        let segs: Vec<&SegmentScore> = scenes.iter().flat_map(|s| &s.segments).collect();
        let mean = |f: fn(&SegmentScore) -> f64| {
            (!segs.is_empty()).then(|| segs.iter().map(|s| f(s)).sum::<f64>() / segs.len() as f64)
        };
        MetricReport {
            k,
            mean_f1: mean(|s| s.score.f1),
            mean_precision: mean(|s| s.score.precision),
            mean_recall: mean(|s| s.score.recall),
            scenes,
            mean_min_ade,
            mean_min_fde,
            horizons,
        }
    }

    /// Per-scene rows as comma-separated text.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene_id,min_ade,min_fde");
        for h in &self.horizons {
            s.push_str(&format!(",ade@{0}steps,fde@{0}steps", h.steps));
        }
        s.push_str(",f1\n");
        for sc in &self.scenes {
            s.push_str(&format!("{},{},{}", sc.scene_id, sc.min_ade, sc.min_fde));
            for h in &sc.horizons {
                s.push_str(&format!(",{},{}", h.min_ade, h.min_fde));
            }
            let f1 = if sc.segments.is_empty() {
                String::new()
            } else {
                let m = sc.segments.iter().map(|g| g.score.f1).sum::<f64>() / sc.segments.len() as f64;
                m.to_string()
            };
            s.push_str(&format!(",{f1}\n"));
        }
        s
    }
}
