//! Flat JSON run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decode::Decoder;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::train::{PunctPolicy, TrainConfig};

/// Every key is optional; unknown keys are rejected. Relative paths are
/// resolved against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model_kind: ModelKind,
    pub emb_dim: usize,
    pub context_layers: usize,
    pub context_heads: Option<usize>,
    pub use_upos: bool,
    pub arc_mlp: usize,
    pub label_mlp: usize,
    pub mlp_dim: usize,
    pub arc_size: usize,
    pub transformer_layers: usize,
    pub k: usize,
    pub gumbel_scale: f64,
    pub train_noise: bool,
    pub dropout: f64,
    pub embed_dropout: f64,
    pub exact_count: bool,
    pub biaffine_bias: bool,
    pub filter_aux_loss: bool,

    pub epochs: usize,
    pub batch_tokens: usize,
    pub lr_main: Option<f64>,
    pub lr_transformer: Option<f64>,
    pub warmup_epochs_main: f64,
    pub warmup_epochs_transformer: f64,
    pub swa_start_epoch: usize,
    pub swa_lr_main: Option<f64>,
    pub swa_lr_transformer: Option<f64>,
    pub seed: u64,
    pub max_train_len: usize,
    pub grad_clip: Option<f64>,
    pub decoder: Decoder,
    pub punct: PunctPolicy,

    pub min_count: usize,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&ModelConfig::default(), &TrainConfig::default())
    }
}

impl RunConfig {
    pub fn from_parts(m: &ModelConfig, t: &TrainConfig) -> Self {
        RunConfig {
            model_kind: m.kind,
            emb_dim: m.emb_dim,
            context_layers: m.context_layers,
            context_heads: m.context_heads,
            use_upos: m.use_upos,
            arc_mlp: m.arc_mlp,
            label_mlp: m.label_mlp,
            mlp_dim: m.mlp_dim,
            arc_size: m.arc_size,
            transformer_layers: m.transformer_layers,
            k: m.k,
            gumbel_scale: m.gumbel_scale,
            train_noise: m.train_noise,
            dropout: m.dropout,
            embed_dropout: m.embed_dropout,
            exact_count: m.exact_count,
            biaffine_bias: m.biaffine_bias,
            filter_aux_loss: m.filter_aux_loss,
            epochs: t.epochs,
            batch_tokens: t.batch_tokens,
            lr_main: t.lr_main,
            lr_transformer: t.lr_transformer,
            warmup_epochs_main: t.warmup_epochs_main,
            warmup_epochs_transformer: t.warmup_epochs_transformer,
            swa_start_epoch: t.swa_start_epoch,
            swa_lr_main: t.swa_lr_main,
            swa_lr_transformer: t.swa_lr_transformer,
            seed: t.seed,
            max_train_len: t.max_train_len,
            grad_clip: t.grad_clip,
            decoder: t.decoder,
            punct: t.punct,
            min_count: 1,
            train_path: None,
            dev_path: None,
            model_path: None,
            metrics_path: None,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            kind: self.model_kind,
            emb_dim: self.emb_dim,
            context_layers: self.context_layers,
            context_heads: self.context_heads,
            use_upos: self.use_upos,
            arc_mlp: self.arc_mlp,
            label_mlp: self.label_mlp,
            mlp_dim: self.mlp_dim,
            arc_size: self.arc_size,
            transformer_layers: self.transformer_layers,
            k: self.k,
            gumbel_scale: self.gumbel_scale,
            train_noise: self.train_noise,
            dropout: self.dropout,
            embed_dropout: self.embed_dropout,
            exact_count: self.exact_count,
            biaffine_bias: self.biaffine_bias,
            filter_aux_loss: self.filter_aux_loss,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_tokens: self.batch_tokens,
            lr_main: self.lr_main,
            lr_transformer: self.lr_transformer,
            warmup_epochs_main: self.warmup_epochs_main,
            warmup_epochs_transformer: self.warmup_epochs_transformer,
            swa_start_epoch: self.swa_start_epoch,
            swa_lr_main: self.swa_lr_main,
            swa_lr_transformer: self.swa_lr_transformer,
            seed: self.seed,
            max_train_len: self.max_train_len,
            grad_clip: self.grad_clip,
            decoder: self.decoder,
            punct: self.punct,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train().validate()?;
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train_path, &mut cfg.dev_path, &mut cfg.model_path, &mut cfg.metrics_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("'{key}' is required for this command")))
    }
}
