//! Exact tree decoders over arc score matrices.

mod brute;
mod cle;
mod eisner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use brute::{brute_force_best_tree, is_projective, BRUTE_FORCE_MAX_LEN};
pub use cle::cle;
pub use eisner::eisner;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MASK_VALUE};

/// Square matrix of arc scores over positions `0..=n`, `get(h, d)` being
/// the score of arc `h → d`. Arcs into the root and self-loops hold `-inf`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// `rows[h][d]`; the root column and diagonal are overwritten with
    /// `-inf`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let size = rows.len();
        if size == 0 || rows.iter().any(|r| r.len() != size) {
            return Err(Error::Decode("score matrix must be square with at least one row".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self::masked(size - 1, data))
    }

    /// From an `(n+1)×(n+1)` tensor. Entries at or below half the mask
    /// constant are treated as masked.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != shape[1] || shape[0] == 0 {
            return Err(Error::Decode(format!("score tensor must be square, got {shape:?}")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| if v <= MASK_VALUE / 2.0 { f64::NEG_INFINITY } else { v })
            .collect();
        Ok(Self::masked(shape[0] - 1, data))
    }

    fn masked(n: usize, mut data: Vec<f64>) -> Self {
        let size = n + 1;
        for i in 0..size {
            data[i * size] = f64::NEG_INFINITY;
            data[i * size + i] = f64::NEG_INFINITY;
        }
        ScoreMatrix { n, data }
    }

    /// Number of tokens (excluding the root).
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, head: usize, dep: usize) -> f64 {
        self.data[head * (self.n + 1) + dep]
    }

    pub fn set(&mut self, head: usize, dep: usize, value: f64) {
        if dep != 0 && dep != head {
            self.data[head * (self.n + 1) + dep] = value;
        }
    }

    /// Sum of arc scores of a head array (`heads[j-1]` = head of `j`).
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads.iter().enumerate().map(|(j, &h)| self.get(h, j + 1)).sum()
    }

    pub(crate) fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n + 1).map(<[f64]>::to_vec).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Eisner,
    Mst,
}

impl Decoder {
    pub fn decode(self, s: &ScoreMatrix) -> Vec<usize> {
        match self {
            Decoder::Eisner => eisner(s),
            Decoder::Mst => cle(s),
        }
    }
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eisner" => Ok(Decoder::Eisner),
            "mst" => Ok(Decoder::Mst),
            other => Err(Error::Config(format!("unknown decoder '{other}' (expected eisner or mst)"))),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decoder::Eisner => "eisner",
            Decoder::Mst => "mst",
        })
    }
}

/// Number of tokens attached to the root.
pub fn root_count(heads: &[usize]) -> usize {
    heads.iter().filter(|&&h| h == 0).count()
}
