use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::networks::{Activation, Architecture};
use crate::opinions::FoldPolicy;

/// Every hyperparameter of a training run. Keys in a config file mirror the
/// field names; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Width of the shared subspace.
    pub l: usize,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub anneal_epochs: usize,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub fold: FoldPolicy,
    pub evidence_activation: Activation,
    pub epsilon: f64,
    pub head_hidden: usize,
    pub disc_hidden: usize,
    /// Stop after this many epochs without improvement of the training loss.
    pub patience: Option<usize>,
    pub min_delta: f64,
    /// Fuse common and specific evidence per view; off feeds specific evidence through.
    pub intra_view: bool,
    /// Learned attention across views; off uses uniform weights.
    pub attention: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l: 64,
            gamma: 1.0,
            delta: 1.0,
            eta: 0.01,
            learning_rate: 3e-3,
            weight_decay: 1e-5,
            epochs: 200,
            anneal_epochs: 50,
            batch_size: None,
            seed: 0,
            fold: FoldPolicy::Mean,
            evidence_activation: Activation::Relu,
            epsilon: 1e-8,
            head_hidden: 64,
            disc_hidden: 64,
            patience: None,
            min_delta: 1e-5,
            intra_view: true,
            attention: true,
        }
    }
}

/// Default learning-rate grid for cross-validated selection.
pub const LEARNING_RATE_GRID: [f64; 4] = [1e-4, 3e-4, 1e-3, 3e-3];

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::contract(msg.to_string()));
        if self.l == 0 || self.head_hidden == 0 || self.disc_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if !(self.gamma >= 0.0 && self.delta >= 0.0 && self.eta >= 0.0) {
            return bad("gamma, delta and eta must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("attention epsilon must be positive");
        }
        if !matches!(
            self.evidence_activation,
            Activation::Relu | Activation::Softplus
        ) {
            return bad("evidence activation must be relu or softplus");
        }
        Ok(())
    }

    pub fn architecture(&self, view_dims: Vec<usize>, classes: usize) -> Architecture {
        Architecture {
            head_hidden: self.head_hidden,
            disc_hidden: self.disc_hidden,
            evidence_activation: self.evidence_activation,
            ..Architecture::new(view_dims, classes, self.l)
        }
    }
}

/// Model variants compared in ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoH1,
    NoAttention,
    NoCommonLoss,
    NoSpecificLoss,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [
        Variant::NoH1,
        Variant::NoAttention,
        Variant::NoCommonLoss,
        Variant::NoSpecificLoss,
    ];

    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        let mut out = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::NoH1 => out.intra_view = false,
            Variant::NoAttention => out.attention = false,
            Variant::NoCommonLoss => out.delta = 0.0,
            Variant::NoSpecificLoss => out.eta = 0.0,
        }
        out
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoH1 => "no_h1",
            Variant::NoAttention => "no_attention",
            Variant::NoCommonLoss => "no_common_loss",
            Variant::NoSpecificLoss => "no_specific_loss",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Variant::Full]
            .into_iter()
            .chain(Variant::ABLATIONS)
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown variant `{s}`")))
    }
}
