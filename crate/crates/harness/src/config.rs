//! Run configuration: a TOML file whose every field can be overridden from
//! the command line.

use std::path::Path;

use clap::Args;
use dfgcn_core::conversation::FeatureDims;
use dfgcn_core::model::{Ablation, ModelConfig};
use dfgcn_core::params::AdamW;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Size of the log-space weight bank.
    pub k: usize,
    pub heads: usize,
    pub attention_layers: usize,
    /// Context window of the graph.
    pub w: usize,
    pub theta: f64,
    pub lambda_mix: f64,
    pub t_end: f64,
    pub step: f64,
    pub blocks: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub text_dim: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub giv: bool,
    pub pgn: bool,
    pub dgcode: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let opt = AdamW::default();
        Self {
            seed: 0,
            hidden_dim: model.hidden_dim,
            num_classes: model.num_classes,
            k: model.bank_size,
            heads: model.heads,
            attention_layers: model.attention_layers,
            w: model.window,
            theta: model.theta,
            lambda_mix: model.lambda_mix,
            t_end: model.t_end,
            step: model.step,
            blocks: model.blocks,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            val_fraction: 0.2,
            text_dim: model.dims.text,
            audio_dim: model.dims.audio,
            video_dim: model.dims.video,
            giv: true,
            pgn: true,
            dgcode: true,
        }
    }
}

impl RunConfig {
    /// Paper-scale widths and batch size.
    pub fn full_scale() -> Self {
        Self {
            hidden_dim: 256,
            batch_size: 32,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(io_at(path))?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            giv: self.giv,
            pgn: self.pgn,
            dgcode: self.dgcode,
        }
    }

    pub fn set_ablation(&mut self, a: Ablation) {
        self.giv = a.giv;
        self.pgn = a.pgn;
        self.dgcode = a.dgcode;
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dims: FeatureDims {
                text: self.text_dim,
                audio: self.audio_dim,
                video: self.video_dim,
            },
            hidden_dim: self.hidden_dim,
            num_classes: self.num_classes,
            bank_size: self.k,
            heads: self.heads,
            attention_layers: self.attention_layers,
            window: self.w,
            theta: self.theta,
            lambda_mix: self.lambda_mix,
            t_end: self.t_end,
            step: self.step,
            blocks: self.blocks,
            ablation: self.ablation(),
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be finite and non-negative");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// `--config` plus one optional override per field.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub attention_layers: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub lambda_mix: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    #[arg(long)]
    pub audio_dim: Option<usize>,
    #[arg(long)]
    pub video_dim: Option<usize>,
    #[arg(long)]
    pub giv: Option<bool>,
    #[arg(long)]
    pub pgn: Option<bool>,
    #[arg(long)]
    pub dgcode: Option<bool>,
}

impl ConfigArgs {
    /// Loads the file (or defaults), applies overrides and `seed`, validates.
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            hidden_dim, num_classes, k, heads, attention_layers, w, theta, lambda_mix, t_end, step, blocks, lr,
            weight_decay, batch_size, max_epochs, patience, val_fraction, text_dim, audio_dim, video_dim, giv, pgn,
            dgcode
        );
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
