//! Scene files.
//!
//! Trajectories: comma-separated text with the mandatory header
//! `scene_id,frame,agent_id,x,y` and one row per observation.
//!
//! Truth groups: JSON object `scene_id -> [{start, end, hyperedges}]` where
//! `start..=end` is a 1-based step range and each hyperedge lists agent ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trajectory::{TrajectorySet, Unit};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: [&str; 5] = ["scene_id", "frame", "agent_id", "x", "y"];

/// Ground-truth groups over one contiguous step range (1-based, inclusive).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSegment {
    pub start: usize,
    pub end: usize,
    /// `M_true x N` rows of 0/1 memberships.
    pub incidence: Vec<Vec<u8>>,
}

impl TruthSegment {
    pub fn contains(&self, step: usize) -> bool {
        (self.start..=self.end).contains(&step)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub segments: Vec<TruthSegment>,
}

impl SceneTruth {
    pub fn validate(&self, agents: usize, steps: usize) -> Result<()> {
        let mut next = 1;
        for seg in &self.segments {
            if seg.start != next || seg.end < seg.start {
                return Err(Error::Validation(format!(
                    "truth segments must tile 1..={steps}; segment {}..={} breaks at {next}",
                    seg.start, seg.end
                )));
            }
            for row in &seg.incidence {
                if row.len() != agents {
                    return Err(Error::dim("truth incidence row", agents, row.len()));
                }
                if row.iter().any(|&v| v > 1) {
                    return Err(Error::Validation("truth incidence must be 0/1".into()));
                }
            }
            next = seg.end + 1;
        }
        if next != steps + 1 {
            return Err(Error::Validation(format!(
                "truth segments end at {} but scene has {steps} steps",
                next - 1
            )));
        }
        Ok(())
    }

    pub fn segment_at(&self, step: usize) -> Option<&TruthSegment> {
        self.segments.iter().find(|s| s.contains(step))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub agent_ids: Vec<i64>,
    pub frames: Vec<i64>,
    pub trajectories: TrajectorySet,
    pub truth: Option<SceneTruth>,
}

impl SceneRecord {
    /// Record with agent ids `0..N` and frames `0..T`.
    pub fn new(id: impl Into<String>, trajectories: TrajectorySet) -> Self {
        SceneRecord {
            id: id.into(),
            agent_ids: (0..trajectories.agents() as i64).collect(),
            frames: (0..trajectories.steps() as i64).collect(),
            trajectories,
            truth: None,
        }
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    let raw = rec.get(k).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field `{}`", TRAJECTORY_HEADER[k]),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value `{raw}` for `{}`", TRAJECTORY_HEADER[k]),
    })
}

/// Parse trajectory text. Rows may appear in any order; they are sorted by
/// (scene, frame, agent). Every frame of a scene must carry the same agents.
pub fn parse_scenes(text: &str, dt: f64, unit: Unit) -> Result<Vec<SceneRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != TRAJECTORY_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }

    type Row = (i64, i64, f64, f64);
    let mut by_scene: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 5 {
            return Err(Error::Parse {
                line,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let scene: String = parse_field(&rec, 0, line)?;
        let frame: i64 = parse_field(&rec, 1, line)?;
        let agent: i64 = parse_field(&rec, 2, line)?;
        let x: f64 = parse_field(&rec, 3, line)?;
        let y: f64 = parse_field(&rec, 4, line)?;
        by_scene.entry(scene).or_default().push((frame, agent, x, y));
    }
    if by_scene.is_empty() {
        return Err(Error::Validation("trajectory file has no rows".into()));
    }

    let mut scenes = Vec::with_capacity(by_scene.len());
    for (id, mut rows) in by_scene {
        rows.sort_by_key(|a| (a.0, a.1));
        let frames: Vec<i64> = rows
            .iter()
            .map(|r| r.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let agents: Vec<i64> = rows
            .iter()
            .map(|r| r.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if rows.len() != frames.len() * agents.len() {
            return Err(Error::Validation(format!(
                "scene {id}: inconsistent agent counts across frames ({} rows for {} frames x {} agents)",
                rows.len(),
                frames.len(),
                agents.len()
            )));
        }
        let (nf, na) = (frames.len(), agents.len());
        let mut positions = vec![0.0; na * nf * 2];
        for (k, r) in rows.iter().enumerate() {
            let (t, i) = (k / na, k % na);
            if r.0 != frames[t] || r.1 != agents[i] {
                return Err(Error::Validation(format!(
                    "scene {id}: frame {} is missing agents or has duplicates",
                    r.0
                )));
            }
            positions[(i * nf + t) * 2] = r.2;
            positions[(i * nf + t) * 2 + 1] = r.3;
        }
        let trajectories = TrajectorySet::new(na, nf, positions, dt, unit)
            .map_err(|e| Error::Validation(format!("scene {id}: {e}")))?;
        scenes.push(SceneRecord {
            id,
            agent_ids: agents,
            frames,
            trajectories,
            truth: None,
        });
    }
    Ok(scenes)
}

pub fn format_scenes(scenes: &[SceneRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Validation(format!("csv write: {e}"));
    w.write_record(TRAJECTORY_HEADER).map_err(io)?;
    let mut order: Vec<&SceneRecord> = scenes.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    for s in order {
        let ts = &s.trajectories;
        for (t, frame) in s.frames.iter().enumerate() {
            let mut agents: Vec<(usize, i64)> = s.agent_ids.iter().copied().enumerate().collect();
            agents.sort_by_key(|a| a.1);
            for (i, aid) in agents {
                let p = ts.pos(i, t);
                w.write_record([
                    s.id.clone(),
                    frame.to_string(),
                    aid.to_string(),
                    p[0].to_string(),
                    p[1].to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn load_scenes(path: &Path, dt: f64, unit: Unit) -> Result<Vec<SceneRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenes(&text, dt, unit)
}

pub fn save_scenes(scenes: &[SceneRecord], path: &Path) -> Result<()> {
    let text = format_scenes(scenes)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthSegmentRecord {
    pub start: usize,
    pub end: usize,
    pub hyperedges: Vec<Vec<i64>>,
}

pub type TruthFile = BTreeMap<String, Vec<TruthSegmentRecord>>;

pub fn truth_to_file(scenes: &[SceneRecord]) -> TruthFile {
    let mut out = TruthFile::new();
    for s in scenes {
        let Some(truth) = &s.truth else { continue };
        let segs = truth
            .segments
            .iter()
            .map(|seg| TruthSegmentRecord {
                start: seg.start,
                end: seg.end,
                hyperedges: seg
                    .incidence
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(_, &v)| v == 1)
                            .map(|(i, _)| s.agent_ids[i])
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        out.insert(s.id.clone(), segs);
    }
    out
}

/// Attach truth groups to matching scenes, validating ids and step ranges.
pub fn attach_truth(scenes: &mut [SceneRecord], file: &TruthFile) -> Result<()> {
    for s in scenes.iter_mut() {
        let Some(segs) = file.get(&s.id) else { continue };
        let mut truth = SceneTruth::default();
        for seg in segs {
            let mut incidence = Vec::with_capacity(seg.hyperedges.len());
            for edge in &seg.hyperedges {
                let mut row = vec![0u8; s.agent_ids.len()];
                for aid in edge {
                    let i = s.agent_ids.iter().position(|a| a == aid).ok_or_else(|| {
                        Error::Validation(format!("scene {}: unknown agent id {aid} in truth", s.id))
                    })?;
                    row[i] = 1;
                }
                incidence.push(row);
            }
            truth.segments.push(TruthSegment {
                start: seg.start,
                end: seg.end,
                incidence,
            });
        }
        truth.validate(s.trajectories.agents(), s.trajectories.steps())?;
        s.truth = Some(truth);
    }
    Ok(())
}

pub fn save_truth(scenes: &[SceneRecord], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&truth_to_file(scenes))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// File names inside a dataset directory.
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const META_FILE: &str = "dataset.json";

/// Sampling step and unit shared by every scene of a dataset directory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dt: f64,
    pub unit: Unit,
}

/// Write trajectories, truth groups (when any scene has them) and metadata
/// into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, scenes: &[SceneRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = match scenes.first() {
        Some(s) => DatasetMeta {
            dt: s.trajectories.dt,
            unit: s.trajectories.unit,
        },
        None => DatasetMeta {
            dt: 1.0,
            unit: Unit::Meters,
        },
    };
    if scenes.iter().any(|s| s.trajectories.dt != meta.dt || s.trajectories.unit != meta.unit) {
        return Err(Error::Validation("scenes of one dataset must share dt and unit".into()));
    }
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    save_scenes(scenes, &dir.join(TRAJECTORY_FILE))?;
    if scenes.iter().any(|s| s.truth.is_some()) {
        save_truth(scenes, &dir.join(TRUTH_FILE))?;
    }
    Ok(())
}

/// Read a dataset directory. The metadata file is optional (defaults:
/// `dt = 0.4`, meters); truth groups are attached when present.
pub fn load_dataset(dir: &Path) -> Result<Vec<SceneRecord>> {
    let meta_path = dir.join(META_FILE);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str(&text)?
    } else {
        DatasetMeta {
            dt: 0.4,
            unit: Unit::Meters,
        }
    };
    let mut scenes = load_scenes(&dir.join(TRAJECTORY_FILE), meta.dt, meta.unit)?;
    let truth = dir.join(TRUTH_FILE);
    if truth.exists() {
        attach_truth(&mut scenes, &load_truth(&truth)?)?;
    }
    Ok(scenes)
}
