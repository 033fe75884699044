//! Two-stage optimization, data splitting, checkpoints and training logs.

mod config;
mod optim;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::TrainConfig;
pub use optim::{clip_global_norm, Adam};

use crate::data::{normalize_scene, HorizonSpec, SceneRecord, TrajectorySet};
use crate::diff::{checkpoint, Graph, RngStream};
use crate::error::{Error, Result};
use crate::evolution::{predict, run_windows, Continuation, RolloutOptions};
use crate::losses::{breakdown, trace_losses, LossBreakdown, LossConfig};
use crate::metrics::min_ade_fde;
use crate::model::{Branches, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// 70/15/15 assignment from a hash of the scene id.
pub fn split_of(scene_id: &str) -> Split {
    let digest = Sha256::digest(scene_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    match u64::from_le_bytes(head) % 100 {
        0..70 => Split::Train,
        70..85 => Split::Val,
        _ => Split::Test,
    }
}

/// One training example: `T_h + T_f` steps cut from a scene.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scene_id: String,
    pub offset: usize,
    pub raw: TrajectorySet,
    pub norm: TrajectorySet,
}

/// Cut every scene into examples of `T_h + T_f` steps, `stride` apart
/// (default: non-overlapping). Scenes that are too short are skipped.
pub fn make_samples<'a>(
    scenes: impl IntoIterator<Item = &'a SceneRecord>,
    spec: HorizonSpec,
    stride: Option<usize>,
) -> Result<Vec<Sample>> {
    let total = spec.total();
    let stride = stride.unwrap_or(total).max(1);
    let mut out = Vec::new();
    for s in scenes {
        let ts = &s.trajectories;
        let mut offset = 0;
        while offset + total <= ts.steps() {
            let raw = TrajectorySet::new(ts.agents(), total, ts.window(offset, total), ts.dt, ts.unit)?;
            let (norm, _) = normalize_scene(&raw, spec.history);
            out.push(Sample {
                scene_id: s.id.clone(),
                offset,
                raw,
                norm,
            });
            offset += stride;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: u8,
    pub teacher_probability: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_min_ade: Option<f64>,
    pub val_min_fde: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss in the final stage.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub last: Model,
    pub log: Vec<EpochLog>,
}

/// Branches active during `epoch`: the warm-up stage runs the pair-wise
/// branch alone.
pub fn stage_branches(cfg: &TrainConfig, epoch: usize) -> Branches {
    let mut b = cfg.mode.branches();
    if epoch < cfg.warmup() {
        b.hypergraph = false;
    }
    b
}

/// Mean objective over samples with frozen noise, soft relations and no
/// teacher forcing.
pub fn validation_loss(
    model: &Model,
    branches: Branches,
    samples: &[Sample],
    loss: &LossConfig,
) -> Result<LossBreakdown> {
    let opts = RolloutOptions {
        branches,
        hard: false,
        teacher: Vec::new(),
        continuation: Continuation::Means,
    };
    let mut acc = LossBreakdown::default();
    for s in samples {
        let mut g = Graph::new();
        let trace = run_windows(model, &mut g, &s.norm, &opts, None)?;
        let terms = trace_losses(&mut g, &trace, &s.norm, loss)?;
        let b = breakdown(&g, &terms);
        b.check_finite()?;
        acc.add(&b);
    }
    Ok(acc.scaled(1.0 / samples.len().max(1) as f64))
}

/// Mean `(minADE_K, minFDE_K)` over samples in their original units.
pub fn evaluate_min_ade(
    model: &Model,
    branches: Branches,
    samples: &[Sample],
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let spec = model.config.horizon;
    let (mut ade, mut fde) = (0.0, 0.0);
    for (n, s) in samples.iter().enumerate() {
        let b = predict(model, branches, &s.scene_id, &s.raw, k, seed ^ n as u64)?;
        let truth = s.raw.window(spec.history, spec.future);
        let (a, f) = min_ade_fde(&truth, &b.samples, s.raw.agents(), spec.future)?;
        ade += a;
        fde += f;
    }
    let n = samples.len().max(1) as f64;
    Ok((ade / n, fde / n))
}

const TEACHER_TAG: u64 = 1 << 63;
const SHUFFLE_TAG: u64 = 1 << 62;
const EVAL_SEED: u64 = 0x5eed_e7a1;

/// Train on the hash-split of `scenes`.
pub fn train(scenes: &[SceneRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let spec = cfg.model.horizon;
    let pick = |split: Split| {
        make_samples(scenes.iter().filter(|s| split_of(&s.id) == split), spec, cfg.sample_stride)
    };
    let tr = pick(Split::Train)?;
    let va = pick(Split::Val)?;
    train_on(&tr, &va, cfg, |_| {})
}

/// Train on explicit sample sets, calling `on_epoch` after every epoch.
/// An empty validation set falls back to the training samples.
pub fn train_on(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("no training samples".into()));
    }
    let val = if val.is_empty() {
        log::warn!("empty validation split, validating on training samples");
        train
    } else {
        val
    };
    let loss_cfg = cfg.effective_loss();
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = Adam::new(&model.store, cfg.learning_rate);
    let ids: Vec<_> = model.store.ids().collect();
    let pairwise: Vec<bool> = ids.iter().map(|&id| model.is_pairwise_param(model.store.name(id))).collect();
    let all = vec![true; ids.len()];
    let root = RngStream::new(cfg.seed);
    let windows = spec_windows(cfg);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let stage = if epoch < cfg.warmup() { 1 } else { 2 };
        let branches = stage_branches(cfg, epoch);
        let mask = if stage == 1 { &pairwise } else { &all };
        let p_tf = cfg.teacher_probability(epoch);
        let mut shuffle = root.derive(SHUFFLE_TAG | epoch as u64);
        order.shuffle(&mut shuffle);

        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = ids.iter().map(|&id| vec![0.0; model.store.get(id).numel()]).collect();
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let key = ((epoch as u64) << 32) | k as u64;
                let mut noise = root.derive(key);
                let mut coin = root.derive(TEACHER_TAG | key);
                let teacher: Vec<bool> = (0..windows).map(|_| coin.uniform() < p_tf).collect();
                let opts = RolloutOptions {
                    branches,
                    hard: false,
                    teacher,
                    continuation: Continuation::Means,
                };
                let s = &train[k];
                let mut g = Graph::new();
                let trace = run_windows(&model, &mut g, &s.norm, &opts, Some(&mut noise))?;
                let terms = trace_losses(&mut g, &trace, &s.norm, &loss_cfg)?;
                let b = breakdown(&g, &terms);
                b.check_finite().map_err(|e| match e {
                    Error::NonFinite { term, value } => Error::NonFinite {
                        term: format!("{term} (scene {}, epoch {epoch})", s.scene_id),
                        value,
                    },
                    other => other,
                })?;
                epoch_loss.add(&b);
                let obj = g.scale(terms.total, scale);
                g.backward(obj)?;
                for (id, gv) in g.param_grads() {
                    for (a, v) in grads[id.index()].iter_mut().zip(gv) {
                        *a += v;
                    }
                }
            }
            clip_global_norm(&mut grads, mask, cfg.clip_norm);
            opt.step(&mut model.store, &grads, mask)?;
        }
        let train_loss = epoch_loss.scaled(1.0 / train.len() as f64);
        let val_loss = validation_loss(&model, branches, val, &loss_cfg)?;
        let eval_now = cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
        let (val_min_ade, val_min_fde) = if eval_now {
            let (a, f) = evaluate_min_ade(&model, branches, val, cfg.eval_samples, EVAL_SEED)?;
            (Some(a), Some(f))
        } else {
            (None, None)
        };
        let entry = EpochLog {
            epoch,
            stage,
            teacher_probability: p_tf,
            train: train_loss,
            val: val_loss,
            val_min_ade,
            val_min_fde,
        };
        log::debug!(
            "epoch {epoch} stage {stage} train {:.5} val {:.5}",
            entry.train.total,
            entry.val.total
        );
        on_epoch(&entry);
        log.push(entry);
        if stage == 2 && best.as_ref().is_none_or(|(v, _, _)| val_loss.total < *v) {
            best = Some((val_loss.total, epoch, model.clone()));
        }
    }
    let (best_val_loss, best_epoch, best_model) = best.expect("final stage has at least one epoch");
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        best_val_loss,
        last: model,
        log,
    })
}

fn spec_windows(cfg: &TrainConfig) -> usize {
    cfg.model.horizon.window_count()
}

/// Write the model parameters together with the configuration needed to
/// rebuild it.
pub fn save_model(path: &Path, model: &Model, cfg: &TrainConfig, extra: serde_json::Value) -> Result<()> {
    let meta = serde_json::json!({
        "train_config": cfg,
        "extra": extra,
    });
    checkpoint::save(path, &model.store, meta)
}

pub fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    let (store, meta) = checkpoint::load(path)?;
    let cfg: TrainConfig = serde_json::from_value(
        meta.get("train_config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("missing train_config".into()))?,
    )?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    model.store.load_from(&store)?;
    Ok((model, cfg))
}

pub const LOSS_LOG_HEADER: [&str; 15] = [
    "epoch",
    "stage",
    "teacher_p",
    "L_rec",
    "L_kl",
    "L_sm",
    "L_sp",
    "L",
    "val_L_rec",
    "val_L_kl",
    "val_L_sm",
    "val_L_sp",
    "val_L",
    "val_min_ade",
    "val_min_fde",
];

pub fn loss_log_csv(log: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(LOSS_LOG_HEADER).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.stage.to_string(),
            e.teacher_probability.to_string(),
            e.train.rec.to_string(),
            e.train.kl.to_string(),
            e.train.smooth.to_string(),
            e.train.sparse.to_string(),
            e.train.total.to_string(),
            e.val.rec.to_string(),
            e.val.kl.to_string(),
            e.val.smooth.to_string(),
            e.val.sparse.to_string(),
            e.val.total.to_string(),
            opt(e.val_min_ade),
            opt(e.val_min_fde),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
