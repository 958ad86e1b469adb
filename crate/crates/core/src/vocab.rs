//! Form, UPOS and label vocabularies.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conllu::Sentence;

/// Reserved id of the root marker (position 0).
pub const ROOT_ID: usize = 0;
/// Reserved id of unknown forms and tags.
pub const UNK_ID: usize = 1;

const RESERVED: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_count must be at least 1")]
    MinCount,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    forms: Vec<String>,
    upos: Vec<String>,
    labels: Vec<String>,
}

/// Dense id maps. Form and UPOS ids start at 2 (0 = root marker,
/// 1 = unknown); label ids start at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    forms: Vec<String>,
    upos: Vec<String>,
    labels: Vec<String>,
    form_ids: HashMap<String, usize>,
    upos_ids: HashMap<String, usize>,
    label_ids: HashMap<String, usize>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::from_lists(r.forms, r.upos, r.labels)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            forms: v.forms,
            upos: v.upos,
            labels: v.labels,
        }
    }
}

fn index(items: &[String], offset: usize) -> HashMap<String, usize> {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i + offset))
        .collect()
}

impl Vocab {
    /// Builds maps from sorted lists; forms are expected lowercased.
    pub fn from_lists(forms: Vec<String>, upos: Vec<String>, labels: Vec<String>) -> Self {
        Vocab {
            form_ids: index(&forms, RESERVED),
            upos_ids: index(&upos, RESERVED),
            label_ids: index(&labels, 0),
            forms,
            upos,
            labels,
        }
    }

    /// Forms seen fewer than `min_count` times (after lowercasing) map to
    /// the unknown id. Ids are assigned in lexicographic order.
    pub fn build(train: &[Sentence], min_count: usize) -> Result<Self, VocabError> {
        if min_count < 1 {
            return Err(VocabError::MinCount);
        }
        if train.iter().all(Sentence::is_empty) {
            return Err(VocabError::EmptyCorpus);
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut upos = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for tok in train.iter().flat_map(|s| &s.tokens) {
            *counts.entry(tok.form.to_lowercase()).or_default() += 1;
            upos.insert(tok.upos.clone());
            labels.insert(tok.deprel.clone());
        }
        let forms = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(f, _)| f)
            .collect();
        Ok(Vocab::from_lists(
            forms,
            upos.into_iter().collect(),
            labels.into_iter().collect(),
        ))
    }

    /// Number of form ids including the two reserved ones.
    pub fn form_count(&self) -> usize {
        self.forms.len() + RESERVED
    }

    pub fn upos_count(&self) -> usize {
        self.upos.len() + RESERVED
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn form_id(&self, form: &str) -> usize {
        self.form_ids
            .get(&form.to_lowercase())
            .copied()
            .unwrap_or(UNK_ID)
    }

    pub fn upos_id(&self, upos: &str) -> usize {
        self.upos_ids.get(upos).copied().unwrap_or(UNK_ID)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conllu::Token;

    fn corpus() -> Vec<Sentence> {
        vec![
            Sentence::new(vec![Token::new("Dog", "NOUN", 2, "nsubj"), Token::new("runs", "VERB", 0, "root")]),
            Sentence::new(vec![Token::new("dog", "NOUN", 2, "nsubj"), Token::new("barks", "VERB", 0, "root")]),
        ]
    }

    #[test]
    fn label_count_and_determinism() {
        let v = Vocab::build(&corpus(), 1).unwrap();
        assert_eq!(v.num_labels(), 2);
        assert_eq!(v, Vocab::build(&corpus(), 1).unwrap());
        assert_eq!(v.labels(), &["nsubj".to_string(), "root".to_string()]);
    }

    #[test]
    fn rare_forms_are_unknown() {
        let v = Vocab::build(&corpus(), 2).unwrap();
        assert_eq!(v.form_id("runs"), UNK_ID);
        assert_eq!(v.form_id("DOG"), 2);
        assert_eq!(v.form_count(), 3);
    }

    #[test]
    fn ids_are_dense_from_two() {
        let v = Vocab::build(&corpus(), 1).unwrap();
        let mut ids: Vec<usize> = v.forms().iter().map(|f| v.form_id(f)).collect();
        ids.sort();
        assert_eq!(ids, (2..v.form_count()).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        assert_eq!(Vocab::build(&[], 1), Err(VocabError::EmptyCorpus));
        assert_eq!(Vocab::build(&corpus(), 0), Err(VocabError::MinCount));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::build(&corpus(), 1).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.form_id("barks"), v.form_id("barks"));
    }
}
