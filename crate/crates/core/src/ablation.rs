//! Ablation driver: every mode trained on the same split with the same
//! seeds, evaluated on the held-out scenes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::evolution::{predict, relations_on_truth};
use crate::metrics::{scene_metrics, HorizonError, MetricReport};
use crate::model::AblationMode;
use crate::train::{make_samples, split_of, train_on, Split, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    /// Base configuration; `mode` and `seed` are overridden per run.
    pub train: TrainConfig,
    pub modes: Vec<AblationMode>,
    pub seeds: Vec<u64>,
    /// Sampled futures per test scene.
    pub samples: usize,
    pub eval_seed: u64,
    /// Membership threshold for incidence scoring.
    pub threshold: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            modes: AblationMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            samples: 20,
            eval_seed: 7,
            threshold: 0.5,
        }
    }
}

impl AblationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AblationConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one mode and one seed".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("ablation needs at least one sample per scene".into()));
        }
        self.train.validate()
    }
}

/// Outcome of one (mode, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: AblationMode,
    pub seed: u64,
    pub best_epoch: usize,
    pub report: MetricReport,
    /// Validation minADE at the last evaluated epoch.
    pub final_val_min_ade: f64,
    /// Wall-clock training time.
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub seeds: usize,
    pub min_ade: f64,
    pub min_ade_std: f64,
    pub min_fde: f64,
    pub min_fde_std: f64,
    pub horizons: Vec<HorizonError>,
    pub f1: Option<f64>,
    pub final_val_min_ade: f64,
    pub final_val_min_ade_std: f64,
}

impl AblationRow {
    /// Standard error of the mean test minADE.
    pub fn min_ade_se(&self) -> f64 {
        self.min_ade_std / (self.seeds as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: AblationMode,
    pub seed: u64,
    pub epoch: usize,
    pub val_min_ade: f64,
    pub val_min_fde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<RunResult>,
    pub curve: Vec<CurvePoint>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl AblationReport {
    pub fn row(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// One line per mode with mean and sample standard deviation over seeds.
    pub fn table_csv(&self) -> String {
        let mut s = String::from("mode,seeds,min_ade,min_ade_std,min_fde,min_fde_std");
        if let Some(first) = self.rows.first() {
            for h in &first.horizons {
                s.push_str(&format!(",ade@{0}steps,fde@{0}steps", h.steps));
            }
        }
        s.push_str(",f1,final_val_min_ade,final_val_min_ade_std\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}",
                r.mode, r.seeds, r.min_ade, r.min_ade_std, r.min_fde, r.min_fde_std
            ));
            for h in &r.horizons {
                s.push_str(&format!(",{},{}", h.min_ade, h.min_fde));
            }
            let f1 = r.f1.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!(",{f1},{},{}\n", r.final_val_min_ade, r.final_val_min_ade_std));
        }
        s
    }

    /// Validation minADE/minFDE against epoch for every run.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("mode,seed,epoch,val_min_ade,val_min_fde\n");
        for p in &self.curve {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                p.mode, p.seed, p.epoch, p.val_min_ade, p.val_min_fde
            ));
        }
        s
    }
}

fn summarize(mode: AblationMode, runs: &[&RunResult]) -> AblationRow {
    let (min_ade, min_ade_std) = mean_std(&runs.iter().map(|r| r.report.mean_min_ade).collect::<Vec<_>>());
    let (min_fde, min_fde_std) = mean_std(&runs.iter().map(|r| r.report.mean_min_fde).collect::<Vec<_>>());
    let (final_val_min_ade, final_val_min_ade_std) =
        mean_std(&runs.iter().map(|r| r.final_val_min_ade).collect::<Vec<_>>());
    let n = runs.len() as f64;
    let horizons = match runs.first() {
        Some(first) => (0..first.report.horizons.len())
            .map(|h| HorizonError {
                fraction: first.report.horizons[h].fraction,
                steps: first.report.horizons[h].steps,
                min_ade: runs.iter().map(|r| r.report.horizons[h].min_ade).sum::<f64>() / n,
                min_fde: runs.iter().map(|r| r.report.horizons[h].min_fde).sum::<f64>() / n,
            })
            .collect(),
        None => Vec::new(),
    };
    let f1s: Vec<f64> = runs.iter().filter_map(|r| r.report.mean_f1).collect();
    AblationRow {
        mode,
        seeds: runs.len(),
        min_ade,
        min_ade_std,
        min_fde,
        min_fde_std,
        horizons,
        f1: (!f1s.is_empty()).then(|| f1s.iter().sum::<f64>() / f1s.len() as f64),
        final_val_min_ade,
        final_val_min_ade_std,
    }
}

/// Evaluate a trained model on held-out scenes.
pub fn evaluate_scenes(
    model: &crate::model::Model,
    mode: AblationMode,
    scenes: &[&SceneRecord],
    k: usize,
    seed: u64,
    threshold: f64,
) -> Result<MetricReport> {
    let branches = mode.branches();
    let total = model.config.horizon.total();
    let mut out = Vec::with_capacity(scenes.len());
    for (n, s) in scenes.iter().enumerate() {
        if s.trajectories.steps() < total {
            continue;
        }
        let mut b = predict(model, branches, &s.id, &s.trajectories, k, seed ^ n as u64)?;
        if branches.hypergraph && s.truth.is_some() {
            b.truth_relations = Some(relations_on_truth(model, branches, &s.trajectories)?);
        }
        out.push(scene_metrics(&b, &s.trajectories, s.truth.as_ref(), threshold)?);
    }
    Ok(MetricReport::from_scenes(k, out))
}

/// Train every configured mode with every seed on the hash split of
/// `scenes` and evaluate on its test part. Runs are sequential.
pub fn run_ablation(scenes: &[SceneRecord], cfg: &AblationConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let spec = cfg.train.model.horizon;
    let stride = cfg.train.sample_stride;
    let pick = |split: Split| scenes.iter().filter(move |s| split_of(&s.id) == split);
    let train = make_samples(pick(Split::Train), spec, stride)?;
    let val = make_samples(pick(Split::Val), spec, stride)?;
    let test: Vec<&SceneRecord> = pick(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Validation("ablation needs at least one test scene".into()));
    }

    let mut runs = Vec::new();
    let mut curve = Vec::new();
    for &mode in &cfg.modes {
        for &seed in &cfg.seeds {
            let mut tc = cfg.train.clone();
            tc.mode = mode;
            tc.seed = seed;
            if tc.eval_every == 0 {
                tc.eval_every = tc.epochs;
            }
            log::info!("ablation: training {mode} seed {seed}");
            let started = Instant::now();
            let out = train_on(&train, &val, &tc, |e| {
                if let (Some(a), Some(f)) = (e.val_min_ade, e.val_min_fde) {
                    curve.push(CurvePoint {
                        mode,
                        seed,
                        epoch: e.epoch,
                        val_min_ade: a,
                        val_min_fde: f,
                    });
                }
            })?;
            let train_seconds = started.elapsed().as_secs_f64();
            let final_val_min_ade = out
                .log
                .iter()
                .rev()
                .find_map(|e| e.val_min_ade)
                .expect("the last epoch is always evaluated");
            let report = evaluate_scenes(&out.best, mode, &test, cfg.samples, cfg.eval_seed, cfg.threshold)?;
            runs.push(RunResult {
                mode,
                seed,
                best_epoch: out.best_epoch,
                report,
                final_val_min_ade,
                train_seconds,
            });
        }
    }
    let rows = cfg
        .modes
        .iter()
        .map(|&m| summarize(m, &runs.iter().filter(|r| r.mode == m).collect::<Vec<_>>()))
        .collect();
    Ok(AblationReport { rows, runs, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn config_toml_defaults() {
        let cfg = AblationConfig::from_toml("seeds = [5]\n[train]\nepochs = 4\nwarmup_epochs = 1\n").unwrap();
        assert_eq!(cfg.seeds, vec![5]);
        assert_eq!(cfg.modes.len(), 6);
        assert_eq!(cfg.train.epochs, 4);
        assert!(AblationConfig::from_toml("seeds = []").is_err());
    }
}
