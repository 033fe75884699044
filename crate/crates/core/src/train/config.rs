use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{AblationMode, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Epochs of the pair-wise-only stage (modes with both branches only).
    pub warmup_epochs: usize,
    /// Total epochs including warm-up.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub mode: AblationMode,
    /// Encode ground truth in later windows with an annealed probability.
    pub teacher_forcing: bool,
    /// Stride in steps between training samples cut from long scenes.
    pub sample_stride: Option<usize>,
    /// Compute validation minADE every this many epochs (0 = never).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 50,
            epochs: 250,
            batch_size: 16,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            seed: 0,
            mode: AblationMode::DcgDhgSmSp,
            teacher_forcing: true,
            sample_stride: None,
            eval_every: 10,
            eval_samples: 20,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.mode.has_warmup() && self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be positive".into()));
        }
        if self.eval_every > 0 && self.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be positive".into()));
        }
        if self.sample_stride == Some(0) {
            return Err(Error::Config("sample_stride must be positive".into()));
        }
        if self.mode.uses_smoothness() && self.loss.sm_cg == 0.0 && self.loss.sm_hg == 0.0 {
            return Err(Error::Config(format!("mode {} needs a positive smoothness weight", self.mode)));
        }
        if self.mode.uses_sparsity() && self.loss.sp_cg == 0.0 && self.loss.sp_hg == 0.0 {
            return Err(Error::Config(format!("mode {} needs a positive sparsity weight", self.mode)));
        }
        Ok(())
    }

    /// Loss weights with terms the mode does not use set to zero.
    pub fn effective_loss(&self) -> LossConfig {
        let mut l = self.loss;
        if !self.mode.uses_smoothness() {
            l.sm_cg = 0.0;
            l.sm_hg = 0.0;
        }
        if !self.mode.uses_sparsity() {
            l.sp_cg = 0.0;
            l.sp_hg = 0.0;
        }
        l
    }

    /// Warm-up length actually applied.
    pub fn warmup(&self) -> usize {
        if self.mode.has_warmup() {
            self.warmup_epochs
        } else {
            0
        }
    }

    /// Teacher-forcing probability at `epoch`: 1 through warm-up, then a
    /// linear decay to 0 at the last epoch.
    pub fn teacher_probability(&self, epoch: usize) -> f64 {
        if !self.teacher_forcing {
            return 0.0;
        }
        let w = self.warmup();
        if epoch < w {
            return 1.0;
        }
        let span = self.epochs.saturating_sub(w + 1);
        if span == 0 {
            return 0.0;
        }
        1.0 - (epoch - w) as f64 / span as f64
    }
}
