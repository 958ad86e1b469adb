//! Token embeddings, optional self-attention context, and the head/modifier
//! specialization layers.

use rand::Rng;

use super::config::{ModelConfig, ModelKind};
use crate::conllu::Sentence;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Ffn, LayerNorm, Linear, Placement, TransformerBlock};
use crate::params::{Init, ParamGroup, ParamId, ParamRole, ParamStore};
use crate::tensor::{Graph, Var};
use crate::vocab::{Vocab, ROOT_ID};

/// A sentence mapped through the vocabulary; index 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub forms: Vec<usize>,
    pub upos: Vec<usize>,
    /// Gold head of token `j` at `j - 1`.
    pub heads: Vec<usize>,
    /// Gold label id of token `j` at `j - 1`; `None` when unseen in training.
    pub labels: Vec<Option<usize>>,
}

impl EncodedSentence {
    pub fn new(sentence: &Sentence, vocab: &Vocab) -> Self {
        let mut forms = vec![ROOT_ID];
        let mut upos = vec![ROOT_ID];
        for t in &sentence.tokens {
            forms.push(vocab.form_id(&t.form));
            upos.push(vocab.upos_id(&t.upos));
        }
        EncodedSentence {
            forms,
            upos,
            heads: sentence.heads(),
            labels: sentence.tokens.iter().map(|t| vocab.label_id(&t.deprel)).collect(),
        }
    }

    /// Number of tokens, root excluded.
    pub fn len(&self) -> usize {
        self.forms.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which specialized representation to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpecRole {
    ArcHead,
    ArcMod,
    LabelHead,
    LabelMod,
    UnifiedHead,
    UnifiedMod,
}

impl SpecRole {
    pub fn module(self) -> &'static str {
        match self {
            SpecRole::ArcHead => "spec.arc_head",
            SpecRole::ArcMod => "spec.arc_mod",
            SpecRole::LabelHead => "spec.label_head",
            SpecRole::LabelMod => "spec.label_mod",
            SpecRole::UnifiedHead => "spec.head",
            SpecRole::UnifiedMod => "spec.mod",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    form_emb: ParamId,
    upos_emb: Option<ParamId>,
    context: Vec<TransformerBlock>,
    final_norm: Option<LayerNorm>,
    emb_dim: usize,
    embed_dropout: f64,
    spec: Vec<(SpecRole, Ffn)>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab: &Vocab, rng: &mut impl Rng) -> Self {
        let e = config.emb_dim;
        // unit-variance entries
        let emb_init = Init::Uniform(3f64.sqrt());
        let form_emb = store.add(
            "embed.form",
            "table",
            &[vocab.form_count(), e],
            ParamRole::Embedding,
            ParamGroup::Main,
            emb_init,
            rng,
        );
        let upos_emb = config.use_upos.then(|| {
            store.add(
                "embed.upos",
                "table",
                &[vocab.upos_count(), e],
                ParamRole::Embedding,
                ParamGroup::Main,
                emb_init,
                rng,
            )
        });
        let ctx_place = Placement::new(ParamRole::Context, ParamGroup::Main, config.layer_bias());
        let context: Vec<TransformerBlock> = (0..config.context_layers)
            .map(|l| {
                TransformerBlock::new(store, &format!("context.{l}"), e, config.context_heads(), ctx_place, rng)
            })
            .collect();
        let final_norm = (!context.is_empty()).then(|| LayerNorm::new(store, "context.norm", e, ParamGroup::Main, rng));

        let roles: Vec<(SpecRole, usize)> = match config.kind {
            ModelKind::Loc => vec![
                (SpecRole::ArcHead, config.arc_mlp),
                (SpecRole::ArcMod, config.arc_mlp),
                (SpecRole::LabelHead, config.label_mlp),
                (SpecRole::LabelMod, config.label_mlp),
            ],
            ModelKind::ArcLoc => vec![(SpecRole::UnifiedHead, config.mlp_dim), (SpecRole::UnifiedMod, config.mlp_dim)],
        };
        let place = Placement::new(ParamRole::Specialize, ParamGroup::Main, config.layer_bias());
        let spec = roles
            .into_iter()
            .map(|(role, out)| {
                let linear = Linear::new(store, role.module(), e, out, place, rng);
                (
                    role,
                    Ffn {
                        linear,
                        dropout: config.dropout,
                    },
                )
            })
            .collect();
        Encoder {
            form_emb,
            upos_emb,
            context,
            final_norm,
            emb_dim: e,
            embed_dropout: config.embed_dropout,
            spec,
        }
    }

    /// Contextual embeddings `[(n+1)×e]`, row 0 for the root.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, sent: &EncodedSentence) -> Result<Var> {
        let table = g.param(store, self.form_emb);
        let mut x = g.embedding_gather(table, &sent.forms)?;
        if let Some(upos) = self.upos_emb {
            let table = g.param(store, upos);
            let u = g.embedding_gather(table, &sent.upos)?;
            x = g.add(x, u)?;
        }
        x = g.dropout(x, self.embed_dropout);
        if self.context.is_empty() {
            return Ok(x);
        }
        let pos = g.constant(sinusoidal_positions(sent.forms.len(), self.emb_dim));
        x = g.add(x, pos)?;
        for block in &self.context {
            x = block.forward(g, store, x)?;
        }
        let norm = self.final_norm.as_ref().expect("norm exists with context layers");
        Ok(norm.forward(g, store, x)?)
    }

    pub fn specialize(&self, g: &mut Graph, store: &ParamStore, e: Var, role: SpecRole) -> Result<Var> {
        let ffn = self
            .spec
            .iter()
            .find(|(r, _)| *r == role)
            .map(|(_, f)| f)
            .ok_or_else(|| Error::Config(format!("no {role:?} specialization in this model")))?;
        Ok(ffn.forward(g, store, e)?)
    }

    pub fn roles(&self) -> Vec<SpecRole> {
        self.spec.iter().map(|(r, _)| *r).collect()
    }
}
