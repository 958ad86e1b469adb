//! Mini-batch training with per-epoch evaluation and best-LAS selection.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{filter_oracle_uas, uas_las, PunctPolicy};
use super::optim::{Adam, Schedule};
use super::swa::SwaState;
use crate::conllu::Sentence;
use crate::decode::Decoder;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{EncodedSentence, ModelKind, Parser};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::{Graph, Mode};

/// Optimization and evaluation settings. Unset learning rates take the
/// per-model defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_tokens: usize,
    pub lr_main: Option<f64>,
    pub lr_transformer: Option<f64>,
    pub warmup_epochs_main: f64,
    pub warmup_epochs_transformer: f64,
    /// First epoch (1-based) trained at the averaging rate and averaged.
    /// `epochs + 1` disables averaging.
    pub swa_start_epoch: usize,
    pub swa_lr_main: Option<f64>,
    pub swa_lr_transformer: Option<f64>,
    pub seed: u64,
    /// Longer training sentences are skipped; evaluation keeps everything.
    pub max_train_len: usize,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub decoder: Decoder,
    pub punct: PunctPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_tokens: 5000,
            lr_main: None,
            lr_transformer: None,
            warmup_epochs_main: 1.0,
            warmup_epochs_transformer: 3.0,
            swa_start_epoch: 5,
            swa_lr_main: None,
            swa_lr_transformer: None,
            seed: 0,
            max_train_len: 128,
            grad_clip: None,
            decoder: Decoder::Mst,
            punct: PunctPolicy::Keep,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_tokens == 0 || self.max_train_len == 0 {
            return bad("epochs, batch_tokens and max_train_len must be positive".into());
        }
        if self.swa_start_epoch == 0 || self.swa_start_epoch > self.epochs + 1 {
            return bad(format!("swa_start_epoch must be in 1..={}", self.epochs + 1));
        }
        let rates = [
            self.lr_main,
            self.lr_transformer,
            self.swa_lr_main,
            self.swa_lr_transformer,
            Some(self.warmup_epochs_main),
            Some(self.warmup_epochs_transformer),
        ];
        if rates.iter().flatten().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return bad("learning rates and warmup lengths must be finite and non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }

    pub fn schedule(&self, kind: ModelKind, group: ParamGroup) -> Schedule {
        let (base, swa, warmup) = match (group, kind) {
            (ParamGroup::Transformer, _) => (
                self.lr_transformer.unwrap_or(2.5e-3),
                self.swa_lr_transformer.unwrap_or(1.35e-4),
                self.warmup_epochs_transformer,
            ),
            (ParamGroup::Main, ModelKind::Loc) => (
                self.lr_main.unwrap_or(8.3e-5),
                self.swa_lr_main.unwrap_or(5e-6),
                self.warmup_epochs_main,
            ),
            (ParamGroup::Main, ModelKind::ArcLoc) => (
                self.lr_main.unwrap_or(3.7e-5),
                self.swa_lr_main.unwrap_or(3.7e-6),
                self.warmup_epochs_main,
            ),
        };
        Schedule {
            base,
            warmup_epochs: warmup,
            swa,
            swa_start_epoch: self.swa_start_epoch,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_uas: f64,
    pub dev_las: f64,
    pub filter_oracle: Option<f64>,
    pub lr_main: f64,
    pub averaged: bool,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the weights evaluated at the best epoch.
    pub best: Parser,
    pub best_epoch: usize,
    pub reports: Vec<EpochReport>,
    /// Live (non-averaged) weights after the last epoch.
    pub last: ParamStore,
    /// Running average over the epochs from `swa_start_epoch` on.
    pub swa: SwaState,
}

/// Index of the first maximum.
pub fn select_best(las: &[f64]) -> Option<usize> {
    las.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Token-budget batches: sentences are added until the budget is reached.
pub fn pack_batches(lengths: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for &i in order {
        cur.push(i);
        tokens += lengths[i];
        if tokens >= budget {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn item_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed, |acc, &p| mix(acc ^ mix(p)))
}

/// Per-sentence loss value and sparse gradients.
type SentenceGrad = (f64, Vec<(usize, Vec<f64>)>);

fn sentence_grad(parser: &Parser, store: &ParamStore, sent: &EncodedSentence, seed: u64) -> Result<SentenceGrad> {
    let mut g = Graph::new(Mode::Train, seed);
    let loss = parser.loss(&mut g, store, sent, None)?;
    let value = g.value(loss.total).data()[0];
    g.backward(loss.total)?;
    let grads = g.param_grads().into_iter().map(|(id, gr)| (id.index(), gr.to_vec())).collect();
    Ok((value, grads))
}

/// Evaluation of every sentence with the given weights.
pub struct Evaluation {
    pub predicted: Vec<Sentence>,
    pub kept: Option<Vec<Vec<Vec<usize>>>>,
}

pub fn predict_corpus(parser: &Parser, sentences: &[Sentence], decoder: Decoder, exec: Exec) -> Result<Evaluation> {
    let preds = exec.map(sentences, |s| -> Result<Option<crate::model::Prediction>> {
        if s.is_empty() {
            return Ok(None);
        }
        parser.predict(&parser.encode(s), decoder).map(Some)
    });
    let mut predicted = Vec::with_capacity(sentences.len());
    let mut kept = parser.has_filter().then(Vec::new);
    for (s, p) in sentences.iter().zip(preds) {
        match p? {
            Some(p) => {
                let labels: Vec<String> = p.labels.iter().map(|&l| parser.vocab.label(l).to_string()).collect();
                predicted.push(s.with_predictions(&p.heads, &labels));
                if let (Some(k), Some(pk)) = (kept.as_mut(), p.kept) {
                    k.push(pk);
                }
            }
            None => {
                predicted.push(s.clone());
                if let Some(k) = kept.as_mut() {
                    k.push(Vec::new());
                }
            }
        }
    }
    Ok(Evaluation { predicted, kept })
}

fn evaluate(parser: &Parser, dev: &[Sentence], cfg: &TrainConfig, exec: Exec) -> Result<(f64, f64, Option<f64>)> {
    let ev = predict_corpus(parser, dev, cfg.decoder, exec)?;
    let att = uas_las(&ev.predicted, dev, cfg.punct)?;
    let oracle = match ev.kept {
        Some(k) => Some(filter_oracle_uas(&k, dev)?),
        None => None,
    };
    Ok((att.uas, att.las, oracle))
}

/// Trains `parser` and returns the weights with the best dev LAS.
///
/// `on_epoch` sees each report and may stop training early.
pub fn train(
    mut parser: Parser,
    train_set: &[Sentence],
    dev: &[Sentence],
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochReport) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let encoded: Vec<EncodedSentence> = train_set
        .iter()
        .filter(|s| !s.is_empty() && s.len() <= cfg.max_train_len)
        .map(|s| parser.encode(s))
        .collect();
    if encoded.is_empty() {
        return Err(Error::EmptyCorpus("no training sentences within max_train_len"));
    }
    if dev.iter().all(Sentence::is_empty) {
        return Err(Error::EmptyCorpus("dev set"));
    }
    let kind = parser.config.kind;
    let main = cfg.schedule(kind, ParamGroup::Main);
    let transformer = cfg.schedule(kind, ParamGroup::Transformer);
    let lengths: Vec<usize> = encoded.iter().map(EncodedSentence::len).collect();
    let mut adam = Adam::new(&parser.store);
    let mut swa = SwaState::new();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut reports = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(&[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let batches = pack_batches(&lengths, &order, cfg.batch_tokens);
        let nb = batches.len();
        let (mut loss_sum, mut loss_tokens, mut skipped) = (0.0, 0usize, 0usize);
        let mut lr_main = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let tokens: usize = batch.iter().map(|&i| lengths[i]).sum();
            let jobs: Vec<(usize, u64)> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| (i, item_seed(&[cfg.seed, epoch as u64, b as u64, k as u64])))
                .collect();
            let store = &parser.store;
            let model = &parser;
            let results = exec.map(&jobs, |&(i, seed)| sentence_grad(model, store, &encoded[i], seed));

            let mut grads: Vec<Vec<f64>> = parser.store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
            let mut batch_loss = 0.0;
            for (&(i, _), r) in jobs.iter().zip(results) {
                let (value, sparse) = r?;
                let w = lengths[i] as f64 / tokens as f64;
                batch_loss += w * value;
                for (id, gr) in sparse {
                    for (acc, v) in grads[id].iter_mut().zip(gr) {
                        *acc += w * v;
                    }
                }
            }
            if !batch_loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
                log::warn!("epoch {epoch} step {b}: non-finite loss or gradient, step skipped");
                skipped += 1;
                continue;
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    grads.iter_mut().flatten().for_each(|v| *v *= s);
                }
            }
            let t = (epoch - 1) as f64 + (b + 1) as f64 / nb as f64;
            let (lm, lt) = (main.lr(t, epoch), transformer.lr(t, epoch));
            lr_main = lm;
            adam.step(&mut parser.store, &grads, |g| match g {
                ParamGroup::Main => lm,
                ParamGroup::Transformer => lt,
            });
            loss_sum += batch_loss * tokens as f64;
            loss_tokens += tokens;
        }

        let averaged = epoch >= cfg.swa_start_epoch;
        let eval_store = if averaged {
            swa.update(&parser.store);
            swa.finalize(&parser.store)?
        } else {
            parser.store.clone()
        };
        let eval_parser = parser.with_store(eval_store);
        let (dev_uas, dev_las, filter_oracle) = evaluate(&eval_parser, dev, cfg, exec)?;
        let report = EpochReport {
            epoch,
            train_loss: if loss_tokens > 0 { loss_sum / loss_tokens as f64 } else { f64::NAN },
            dev_uas,
            dev_las,
            filter_oracle,
            lr_main,
            averaged,
            skipped_steps: skipped,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev UAS {dev_uas:.2} LAS {dev_las:.2}",
            report.train_loss
        );
        if best.as_ref().is_none_or(|(b, _, _)| dev_las > *b) {
            best = Some((dev_las, epoch, eval_parser.store));
        }
        let flow = on_epoch(&report);
        reports.push(report);
        if flow.is_break() {
            break;
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: parser.with_store(store),
        best_epoch,
        reports,
        last: parser.store,
        swa,
    })
}
