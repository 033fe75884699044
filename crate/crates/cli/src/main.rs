use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grouptraj::ablation::{run_ablation, AblationConfig};
use grouptraj::data::{load_dataset, save_dataset, SceneRecord};
use grouptraj::evolution::{predict, relations_on_truth, PredictionBundle};
use grouptraj::metrics::{scene_metrics, MetricReport};
use grouptraj::model::AblationMode;
use grouptraj::sim::SuiteConfig;
use grouptraj::train::{loss_log_csv, save_model, train, TrainConfig, load_model};
use grouptraj::{Error, Result};

/// Group-aware multi-agent trajectory prediction.
///
/// Log verbosity follows the GROUPTRAJ_LOG environment variable
/// (error, warn, info, debug, trace; default info).
#[derive(Parser)]
#[command(name = "grouptraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene suite into a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the train/validation split of a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the mode of the config file.
        #[arg(long)]
        mode: Option<AblationMode>,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path; the loss log is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample futures for every scene of a dataset, one JSON file per scene.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files against a dataset directory.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Per-scene CSV; a JSON summary is written alongside.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Train and evaluate every ablation mode over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn simulate(config: &Path, out: &Path) -> Result<()> {
    let suite = SuiteConfig::load(config)?;
    let scenes = suite.generate()?;
    save_dataset(out, &scenes)?;
    log::info!("wrote {} scenes to {}", scenes.len(), out.display());
    Ok(())
}

fn train_cmd(config: Option<&Path>, data: &Path, mode: Option<AblationMode>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let scenes = load_dataset(data)?;
    log::info!("training {} on {} scenes", cfg.mode, scenes.len());
    let outcome = train(&scenes, &cfg)?;
    let extra = serde_json::json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
    });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_model(out, &outcome.best, &cfg, extra)?;
    write(&sibling(out, ".loss.csv"), &loss_log_csv(&outcome.log)?)?;
    log::info!(
        "best epoch {} (val loss {:.6}), checkpoint {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        out.display()
    );
    Ok(())
}

fn bundle_path(dir: &Path, scene_id: &str) -> PathBuf {
    let safe: String = scene_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.json"))
}

fn predict_cmd(ckpt: &Path, data: &Path, samples: usize, seed: u64, out: &Path) -> Result<()> {
    let (model, cfg) = load_model(ckpt)?;
    let branches = cfg.mode.branches();
    let spec = model.config.horizon;
    let scenes = load_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = 0;
    for (n, s) in scenes.iter().enumerate() {
        if s.trajectories.steps() < spec.history {
            log::warn!("skipping {}: shorter than the history", s.id);
            continue;
        }
        let mut b = predict(&model, branches, &s.id, &s.trajectories, samples, seed ^ n as u64)?;
        if s.trajectories.steps() >= spec.total() {
            b.truth_relations = Some(relations_on_truth(&model, branches, &s.trajectories)?);
        }
        write(&bundle_path(out, &s.id), &b.to_json()?)?;
        written += 1;
    }
    log::info!("wrote {written} prediction files to {}", out.display());
    Ok(())
}

fn eval_cmd(pred: &Path, truth: &Path, report: &Path, threshold: f64) -> Result<()> {
    let scenes = load_dataset(truth)?;
    let by_id = |id: &str| -> Option<&SceneRecord> { scenes.iter().find(|s| s.id == id) };
    let mut files: Vec<PathBuf> = fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut rows = Vec::with_capacity(files.len());
    let mut k = 0;
    for f in &files {
        let b = PredictionBundle::from_json(&read(f)?)?;
        let scene = by_id(&b.scene_id)
            .ok_or_else(|| Error::Validation(format!("{}: scene {} not in truth data", f.display(), b.scene_id)))?;
        k = b.k();
        rows.push(scene_metrics(&b, &scene.trajectories, scene.truth.as_ref(), threshold)?);
    }
    if rows.is_empty() {
        return Err(Error::Validation(format!("no prediction files in {}", pred.display())));
    }
    let rep = MetricReport::from_scenes(k, rows);
    write(report, &rep.to_csv())?;
    write(&report.with_extension("json"), &serde_json::to_string_pretty(&rep)?)?;
    println!("scenes {} minADE_{k} {:.4} minFDE_{k} {:.4}", rep.scenes.len(), rep.mean_min_ade, rep.mean_min_fde);
    if let Some(f1) = rep.mean_f1 {
        println!("incidence F1 {f1:.4}");
    }
    Ok(())
}

fn ablate_cmd(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => AblationConfig::from_toml(&read(p)?)?,
        None => AblationConfig::default(),
    };
    let scenes = load_dataset(data)?;
    let rep = run_ablation(&scenes, &cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join("table.csv"), &rep.table_csv())?;
    write(&out.join("curve.csv"), &rep.curve_csv())?;
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&rep)?)?;
    for r in &rep.rows {
        println!("{:<14} minADE {:.4} ± {:.4}  minFDE {:.4} ± {:.4}", r.mode.label(), r.min_ade, r.min_ade_std, r.min_fde, r.min_fde_std);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => simulate(&config, &out),
        Command::Train { config, data, mode, seed, out } => train_cmd(config.as_deref(), &data, mode, seed, &out),
        Command::Predict { ckpt, data, samples, seed, out } => predict_cmd(&ckpt, &data, samples, seed, &out),
        Command::Eval { pred, truth, report, threshold } => eval_cmd(&pred, &truth, &report, threshold),
        Command::Ablate { config, data, out } => ablate_cmd(config.as_deref(), &data, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GROUPTRAJ_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
