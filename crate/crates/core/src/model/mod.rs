//! Parsers: the two-pipeline biaffine model and the arc-vector model.

pub mod config;
pub mod encoder;
pub mod refiner;
pub mod scorer_arc;
pub mod scorer_loc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, ModelKind};
pub use encoder::{EncodedSentence, Encoder, SpecRole};
pub use refiner::{FilterOutput, FrozenFilter, Refiner};
pub use scorer_arc::{ArcScorer, ArcVectorSet};
pub use scorer_loc::LocScorer;

use crate::conllu::Sentence;
use crate::decode::{Decoder, ScoreMatrix};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{grad_check_params, GradCheckReport, Graph, Mode, Tensor, Var};
use crate::train::loss::{head_selection_loss, label_loss};
use crate::vocab::Vocab;

/// `true` for arcs into the root and self-loops, over `(n+1)²` cells.
pub fn arc_mask(n: usize) -> Vec<bool> {
    let size = n + 1;
    (0..size * size).map(|c| c % size == 0 || c / size == c % size).collect()
}

/// Appends a column of ones.
pub(crate) fn with_ones(g: &mut Graph, x: Var) -> Result<Var> {
    let rows = g.value(x).rows();
    let ones = g.constant(Tensor::full(&[rows, 1], 1.0));
    Ok(g.concat_cols(&[x, ones])?)
}

#[derive(Clone, Debug)]
enum Head {
    Loc(LocScorer),
    Arc { scorer: Box<ArcScorer>, refiner: Refiner },
}

#[derive(Clone, Copy, Debug)]
enum LabelInput {
    Loc { h: Var, m: Var },
    Arc(ArcVectorSet),
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Masked scores `[(n+1)×(n+1)]`.
    pub scores: Var,
    pub filter: Option<FilterOutput>,
    labels: LabelInput,
}

/// Loss terms of one sentence; `total` is the node to differentiate.
#[derive(Clone, Copy, Debug)]
pub struct LossOutput {
    pub total: Var,
    pub arc: f64,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
    /// Kept heads per modifier when the model filters arcs.
    pub kept: Option<Vec<Vec<usize>>>,
    pub scores: ScoreMatrix,
}

#[derive(Clone, Debug)]
pub struct Parser {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    encoder: Encoder,
    head: Head,
}

impl Parser {
    /// Builds a model with freshly initialized parameters.
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.num_labels() == 0 {
            return Err(Error::Config("vocabulary has no labels".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config, &vocab, &mut rng);
        let labels = vocab.num_labels();
        let head = match config.kind {
            ModelKind::Loc => Head::Loc(LocScorer::new(
                &mut store,
                config.arc_mlp,
                config.label_mlp,
                labels,
                config.biaffine_bias(),
                &mut rng,
            )),
            ModelKind::ArcLoc => {
                let scorer = ArcScorer::new(
                    &mut store,
                    config.mlp_dim,
                    config.arc_size,
                    labels,
                    config.transformer_layers > 0,
                    config.dropout,
                    config.layer_bias(),
                    config.biaffine_bias(),
                    &mut rng,
                );
                let refiner = Refiner::new(
                    &mut store,
                    config.arc_size,
                    config.transformer_layers,
                    config.k,
                    config.gumbel_scale,
                    config.train_noise,
                    config.layer_bias(),
                    &mut rng,
                );
                Head::Arc { scorer: Box::new(scorer), refiner }
            }
        };
        Ok(Parser {
            config,
            vocab,
            store,
            encoder,
            head,
        })
    }

    /// Rebuilds a model around saved parameter values, matched by name and
    /// shape.
    pub fn with_params(config: ModelConfig, vocab: Vocab, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut parser = Parser::new(config, vocab, 0)?;
        if params.len() != parser.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                parser.store.len(),
                params.len()
            )));
        }
        for (name, value) in params {
            let id = parser
                .store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter '{name}'")))?;
            if parser.store.value(id).shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    value.shape(),
                    parser.store.value(id).shape()
                )));
            }
            *parser.store.value_mut(id) = value;
        }
        Ok(parser)
    }

    /// Same architecture with other parameter values.
    pub fn with_store(&self, store: ParamStore) -> Parser {
        assert_eq!(store.len(), self.store.len(), "parameter layout differs");
        Parser {
            store,
            ..self.clone()
        }
    }

    pub fn encode(&self, sentence: &Sentence) -> EncodedSentence {
        EncodedSentence::new(sentence, &self.vocab)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn has_filter(&self) -> bool {
        matches!(&self.head, Head::Arc { scorer, .. } if scorer.filter.is_some())
    }

    fn spec(&self, g: &mut Graph, store: &ParamStore, e: Var, role: SpecRole) -> Result<Var> {
        self.encoder.specialize(g, store, e, role)
    }

    /// Scores every arc of `sent` using parameters from `store`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, sent: &EncodedSentence, frozen: Option<&FrozenFilter>) -> Result<Forward> {
        if sent.is_empty() {
            return Err(Error::Eval("cannot score an empty sentence".into()));
        }
        let e = self.encoder.encode(g, store, sent)?;
        match &self.head {
            Head::Loc(sc) => {
                let ha = self.spec(g, store, e, SpecRole::ArcHead)?;
                let ma = self.spec(g, store, e, SpecRole::ArcMod)?;
                let hl = self.spec(g, store, e, SpecRole::LabelHead)?;
                let ml = self.spec(g, store, e, SpecRole::LabelMod)?;
                let scores = sc.arc_scores(g, store, ha, ma)?;
                Ok(Forward {
                    scores,
                    filter: None,
                    labels: LabelInput::Loc { h: hl, m: ml },
                })
            }
            Head::Arc { scorer, refiner } => {
                let h = self.spec(g, store, e, SpecRole::UnifiedHead)?;
                let m = self.spec(g, store, e, SpecRole::UnifiedMod)?;
                let v0 = scorer.arc_vectors(g, store, h, m)?;
                let (arcs, filter) = match scorer.filter_logits(g, store, &v0)? {
                    Some(raw) => {
                        let f = refiner.filter(g, &v0, raw, frozen)?;
                        (refiner.refine(g, store, &v0, &f)?, Some(f))
                    }
                    None => (v0, None),
                };
                let scores = scorer.scores(g, store, &arcs)?;
                Ok(Forward {
                    scores,
                    filter,
                    labels: LabelInput::Arc(arcs),
                })
            }
        }
    }

    /// Label logits `[t×labels]` for `(head, modifier)` arcs.
    pub fn label_logits(&self, g: &mut Graph, store: &ParamStore, fwd: &Forward, arcs: &[(usize, usize)]) -> Result<Var> {
        match (&self.head, fwd.labels) {
            (Head::Loc(sc), LabelInput::Loc { h, m }) => sc.label_logits(g, store, h, m, arcs),
            (Head::Arc { scorer, .. }, LabelInput::Arc(set)) => scorer.label_logits(g, store, &set, arcs),
            _ => unreachable!("forward output from a different model kind"),
        }
    }

    /// Head-selection loss plus label loss on gold arcs (plus the filter
    /// term when enabled).
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, sent: &EncodedSentence, frozen: Option<&FrozenFilter>) -> Result<LossOutput> {
        let fwd = self.forward(g, store, sent, frozen)?;
        let arc = head_selection_loss(g, fwd.scores, &sent.heads)?;
        let (pairs, gold): (Vec<(usize, usize)>, Vec<usize>) = sent
            .heads
            .iter()
            .zip(&sent.labels)
            .enumerate()
            .filter_map(|(jm1, (&h, l))| l.map(|l| ((h, jm1 + 1), l)))
            .unzip();
        let label = if pairs.is_empty() {
            label_loss(g, arc, &[])?
        } else {
            let logits = self.label_logits(g, store, &fwd, &pairs)?;
            label_loss(g, logits, &gold)?
        };
        let (arc_value, label_value) = (g.value(arc).data()[0], g.value(label).data()[0]);
        let mut total = g.add(arc, label)?;
        if self.config.filter_aux_loss {
            if let Some(f) = &fwd.filter {
                let aux = g.cross_entropy(f.logits, &sent.heads)?;
                total = g.add(total, aux)?;
            }
        }
        Ok(LossOutput {
            total,
            arc: arc_value,
            label: label_value,
        })
    }

    /// Decodes a tree and labels its arcs, in evaluation mode.
    pub fn predict(&self, sent: &EncodedSentence, decoder: Decoder) -> Result<Prediction> {
        let mut g = Graph::eval();
        let fwd = self.forward(&mut g, &self.store, sent, None)?;
        let scores = ScoreMatrix::from_tensor(g.value(fwd.scores))?;
        let heads = decoder.decode(&scores);
        let pairs: Vec<(usize, usize)> = heads.iter().enumerate().map(|(jm1, &h)| (h, jm1 + 1)).collect();
        let logits = self.label_logits(&mut g, &self.store, &fwd, &pairs)?;
        let logits = g.value(logits);
        let labels = (0..pairs.len())
            .map(|t| {
                // first maximum wins
                logits
                    .row(t)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect();
        Ok(Prediction {
            heads,
            labels,
            kept: fwd.filter.map(|f| f.kept),
            scores,
        })
    }

    /// Finite-difference check of the full loss gradient on one sentence.
    ///
    /// With a filter, the numerical reference is the frozen-selection
    /// surrogate whose exact gradient the straight-through pass computes.
    pub fn grad_check(&self, sent: &EncodedSentence, eps: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport> {
        let frozen = if self.has_filter() {
            let mut g = Graph::new(Mode::Train, seed);
            let fwd = self.forward(&mut g, &self.store, sent, None)?;
            fwd.filter.map(|f| f.freeze(&g))
        } else {
            None
        };
        let wrap = |r: Result<LossOutput>| match r {
            Ok(l) => Ok(l.total),
            Err(Error::Tensor(t)) => Err(t),
            Err(other) => Err(crate::tensor::TensorError::Invalid(other.to_string())),
        };
        Ok(grad_check_params(
            &self.store,
            |store, g| wrap(self.loss(g, store, sent, None)),
            |store, g| wrap(self.loss(g, store, sent, frozen.as_ref())),
            eps,
            max_coords,
            seed,
        )?)
    }
}
