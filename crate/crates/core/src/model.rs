//! Model configuration, ablation switches and the parameter bundle shared by
//! encoder, decoder and evolution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::HorizonSpec;
use crate::decoder::Decoder;
use crate::diff::{Activation, ParamStore, RngStream};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::evolution::Evolution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Attribute width `D`.
    pub hidden: usize,
    /// Recurrent hidden width `D_h`.
    pub gru_hidden: usize,
    pub edge_types: usize,
    pub hyperedge_types: usize,
    /// Maximum hyperedge count `M`.
    pub max_hyperedges: usize,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    /// Constant variance of the per-step Gaussian.
    pub variance: f64,
    pub activation: Activation,
    /// Evolved logits are `input logits + readout(h)` instead of `readout(h)`.
    pub residual_evolution: bool,
    pub horizon: HorizonSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            gru_hidden: 64,
            edge_types: 2,
            hyperedge_types: 2,
            max_hyperedges: 8,
            temperature: 0.5,
            variance: 0.05,
            activation: Activation::Tanh,
            residual_evolution: true,
            horizon: HorizonSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate()?;
        if self.horizon.history < 2 {
            return Err(Error::Config("history embedding needs at least 2 steps".into()));
        }
        if self.hidden == 0 || self.gru_hidden == 0 {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.edge_types < 2 || self.hyperedge_types < 2 {
            return Err(Error::Config("need at least 2 relation types (null + one)".into()));
        }
        if self.max_hyperedges < 1 {
            return Err(Error::Config("max_hyperedges must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.variance > 0.0) {
            return Err(Error::Config("variance must be positive".into()));
        }
        Ok(())
    }
}

/// The six model variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    #[serde(rename = "SCG")]
    Scg,
    #[serde(rename = "SHG")]
    Shg,
    #[serde(rename = "SCG+SHG")]
    ScgShg,
    #[serde(rename = "DCG+DHG")]
    DcgDhg,
    #[serde(rename = "DCG+DHG+SM")]
    DcgDhgSm,
    #[serde(rename = "DCG+DHG+SM+SP")]
    DcgDhgSmSp,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Scg,
        AblationMode::Shg,
        AblationMode::ScgShg,
        AblationMode::DcgDhg,
        AblationMode::DcgDhgSm,
        AblationMode::DcgDhgSmSp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationMode::Scg => "SCG",
            AblationMode::Shg => "SHG",
            AblationMode::ScgShg => "SCG+SHG",
            AblationMode::DcgDhg => "DCG+DHG",
            AblationMode::DcgDhgSm => "DCG+DHG+SM",
            AblationMode::DcgDhgSmSp => "DCG+DHG+SM+SP",
        }
    }

    pub fn branches(self) -> Branches {
        match self {
            AblationMode::Scg => Branches {
                graph: true,
                hypergraph: false,
                dynamic: false,
            },
            AblationMode::Shg => Branches {
                graph: false,
                hypergraph: true,
                dynamic: false,
            },
            AblationMode::ScgShg => Branches {
                graph: true,
                hypergraph: true,
                dynamic: false,
            },
            _ => Branches {
                graph: true,
                hypergraph: true,
                dynamic: true,
            },
        }
    }

    pub fn uses_smoothness(self) -> bool {
        matches!(self, AblationMode::DcgDhgSm | AblationMode::DcgDhgSmSp)
    }

    pub fn uses_sparsity(self) -> bool {
        matches!(self, AblationMode::DcgDhgSmSp)
    }

    /// Whether a warm-up stage on the pair-wise branch applies.
    pub fn has_warmup(self) -> bool {
        let b = self.branches();
        b.graph && b.hypergraph
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', '_', ' '], "+");
        AblationMode::ALL
            .into_iter()
            .find(|m| m.label() == norm)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }
}

/// Which parts of the model participate in a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    /// Typed pair-wise aggregation in the decoder (and edge typing).
    pub graph: bool,
    /// Incidence inference and hypergraph message passing.
    pub hypergraph: bool,
    /// Re-infer and evolve relations every window instead of reusing the
    /// first window's relations.
    pub dynamic: bool,
}

/// Parameter path prefixes of the pair-wise branch (trained during warm-up).
pub const PAIRWISE_PREFIXES: [&str; 5] = [
    "encoder.pair.",
    "decoder.graph.",
    "decoder.node.",
    "decoder.output.",
    "evolve.graph.",
];

/// Parameter path prefixes of the hypergraph branch.
pub const HYPERGRAPH_PREFIXES: [&str; 3] = ["encoder.hyper.", "decoder.hyper.", "evolve.hyper."];

/// All learnable state of the model.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub evolution: Evolution,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let encoder = Encoder::new(&mut store, &config, &mut rng)?;
        let decoder = Decoder::new(&mut store, &config, &mut rng)?;
        let evolution = Evolution::new(&mut store, &config, &mut rng)?;
        Ok(Model {
            config,
            store,
            encoder,
            decoder,
            evolution,
        })
    }

    pub fn is_hypergraph_param(&self, name: &str) -> bool {
        HYPERGRAPH_PREFIXES.iter().any(|p| name.starts_with(p))
    }

    pub fn is_pairwise_param(&self, name: &str) -> bool {
        PAIRWISE_PREFIXES.iter().any(|p| name.starts_with(p))
    }
}
