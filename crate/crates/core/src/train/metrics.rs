//! Attachment scores and the filter oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conllu::{Sentence, Token};
use crate::error::{Error, Result};

/// Which tokens are excluded from attachment scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PunctPolicy {
    /// Score every token.
    #[default]
    #[serde(rename = "keep")]
    Keep,
    /// Drop tokens whose gold UPOS is `PUNCT`.
    #[serde(rename = "upos")]
    Upos,
    /// Drop tokens whose gold PTB tag is one of `` '' : , .
    #[serde(rename = "pos-set")]
    PosSet,
}

/// Penn Treebank punctuation tags excluded under [`PunctPolicy::PosSet`].
pub const PTB_PUNCT: [&str; 5] = ["``", "''", ":", ",", "."];

impl PunctPolicy {
    pub fn excludes(self, gold: &Token) -> bool {
        match self {
            PunctPolicy::Keep => false,
            PunctPolicy::Upos => gold.upos == "PUNCT",
            PunctPolicy::PosSet => {
                // the fine tag when present, the UPOS column otherwise
                let tag = if gold.xpos != "_" && !gold.xpos.is_empty() {
                    &gold.xpos
                } else {
                    &gold.upos
                };
                PTB_PUNCT.contains(&tag.as_str())
            }
        }
    }
}

impl FromStr for PunctPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep" => Ok(PunctPolicy::Keep),
            "upos" => Ok(PunctPolicy::Upos),
            "pos-set" => Ok(PunctPolicy::PosSet),
            other => Err(Error::Config(format!(
                "unknown punctuation policy '{other}' (expected keep, upos or pos-set)"
            ))),
        }
    }
}

impl fmt::Display for PunctPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PunctPolicy::Keep => "keep",
            PunctPolicy::Upos => "upos",
            PunctPolicy::PosSet => "pos-set",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AttachmentCounts {
    pub total: usize,
    pub heads: usize,
    pub labeled: usize,
}

impl AttachmentCounts {
    pub fn uas(&self) -> f64 {
        100.0 * self.heads as f64 / self.total as f64
    }

    pub fn las(&self) -> f64 {
        100.0 * self.labeled as f64 / self.total as f64
    }
}

/// UAS and LAS in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub uas: f64,
    pub las: f64,
    pub tokens: usize,
}

pub fn attachment_counts(pred: &[Sentence], gold: &[Sentence], policy: PunctPolicy) -> Result<AttachmentCounts> {
    if pred.len() != gold.len() {
        return Err(Error::Eval(format!(
            "{} predicted sentences but {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut c = AttachmentCounts::default();
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Eval(format!(
                "sentence {}: {} predicted tokens but {} gold tokens",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        for (pt, gt) in p.tokens.iter().zip(&g.tokens) {
            if policy.excludes(gt) {
                continue;
            }
            c.total += 1;
            if pt.head == gt.head {
                c.heads += 1;
                if pt.deprel == gt.deprel {
                    c.labeled += 1;
                }
            }
        }
    }
    Ok(c)
}

pub fn uas_las(pred: &[Sentence], gold: &[Sentence], policy: PunctPolicy) -> Result<Attachment> {
    let c = attachment_counts(pred, gold, policy)?;
    if c.total == 0 {
        return Err(Error::Eval("no tokens left to evaluate".into()));
    }
    Ok(Attachment {
        uas: c.uas(),
        las: c.las(),
        tokens: c.total,
    })
}

/// Percentage of tokens whose gold head is among the heads the filter kept.
/// `kept[s][j-1]` lists the kept heads of token `j` in sentence `s`.
pub fn filter_oracle_uas(kept: &[Vec<Vec<usize>>], gold: &[Sentence]) -> Result<f64> {
    if kept.len() != gold.len() {
        return Err(Error::Eval("filter output and gold differ in sentence count".into()));
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (k, g) in kept.iter().zip(gold) {
        if k.len() != g.len() {
            return Err(Error::Eval("filter output and gold differ in length".into()));
        }
        for (heads, tok) in k.iter().zip(&g.tokens) {
            total += 1;
            hit += usize::from(heads.contains(&tok.head));
        }
    }
    if total == 0 {
        return Err(Error::Eval("no tokens left to evaluate".into()));
    }
    Ok(100.0 * hit as f64 / total as f64)
}
