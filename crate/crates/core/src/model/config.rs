use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Two pipelines: biaffine arc scores, biaffine label logits.
    Loc,
    /// One biaffine producing an arc vector read by score and label heads.
    ArcLoc,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loc" => Ok(ModelKind::Loc),
            "arcloc" => Ok(ModelKind::ArcLoc),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Architecture dimensions and switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Token embedding width `e`.
    pub emb_dim: usize,
    pub context_layers: usize,
    /// Attention heads in the context layers; `None` picks by the head rule.
    pub context_heads: Option<usize>,
    pub use_upos: bool,
    /// Loc: arc specialization width `x`.
    pub arc_mlp: usize,
    /// Loc: label specialization width `y`.
    pub label_mlp: usize,
    /// ArcLoc: head/modifier specialization width `d`.
    pub mlp_dim: usize,
    /// ArcLoc: arc vector width `r`.
    pub arc_size: usize,
    /// ArcLoc: transformer layers over arcs `P`.
    pub transformer_layers: usize,
    /// Heads kept per modifier by the filter.
    pub k: usize,
    pub gumbel_scale: f64,
    pub train_noise: bool,
    /// Dropout of every MLP.
    pub dropout: f64,
    /// Dropout on token embeddings.
    pub embed_dropout: f64,
    /// Drop every bias so the parameter count matches the closed-form
    /// formulas.
    pub exact_count: bool,
    /// Append a constant 1 to both biaffine inputs.
    pub biaffine_bias: bool,
    /// Extra cross-entropy on the filter logits against the gold heads.
    pub filter_aux_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::ArcLoc,
            emb_dim: 128,
            context_layers: 2,
            context_heads: None,
            use_upos: true,
            arc_mlp: 500,
            label_mlp: 100,
            mlp_dim: 128,
            arc_size: 128,
            transformer_layers: 1,
            k: 10,
            gumbel_scale: 1.0,
            train_noise: true,
            dropout: 0.33,
            embed_dropout: 0.1,
            exact_count: false,
            biaffine_bias: false,
            filter_aux_loss: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.emb_dim == 0 {
            return bad("emb_dim must be positive".into());
        }
        if self.context_layers > 0 {
            if self.emb_dim < 2 {
                return bad("emb_dim must be at least 2 with context layers".into());
            }
            let heads = self.context_heads();
            if heads == 0 || !self.emb_dim.is_multiple_of(heads) {
                return bad(format!("context_heads {heads} must divide emb_dim {}", self.emb_dim));
            }
        }
        for (name, p) in [("dropout", self.dropout), ("embed_dropout", self.embed_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        match self.kind {
            ModelKind::Loc => {
                if self.arc_mlp == 0 || self.label_mlp == 0 {
                    return bad("arc_mlp and label_mlp must be positive".into());
                }
            }
            ModelKind::ArcLoc => {
                if self.mlp_dim == 0 || self.arc_size == 0 {
                    return bad("mlp_dim and arc_size must be positive".into());
                }
                if !self.arc_size.is_multiple_of(2) {
                    return bad(format!("arc_size must be even, got {}", self.arc_size));
                }
                if self.transformer_layers > 0 && self.arc_size < 2 {
                    return bad("arc_size must be at least 2 with transformer layers".into());
                }
                if self.k == 0 {
                    return bad("k must be at least 1".into());
                }
                if !(self.gumbel_scale >= 0.0 && self.gumbel_scale.is_finite()) {
                    return bad("gumbel_scale must be finite and non-negative".into());
                }
            }
        }
        Ok(())
    }

    pub fn context_heads(&self) -> usize {
        self.context_heads.unwrap_or_else(|| crate::nn::num_heads(self.emb_dim))
    }

    /// Whether ordinary layers carry a bias.
    pub fn layer_bias(&self) -> bool {
        !self.exact_count
    }

    pub fn biaffine_bias(&self) -> bool {
        self.biaffine_bias && !self.exact_count
    }
}
