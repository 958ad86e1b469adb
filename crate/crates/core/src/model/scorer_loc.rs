//! Biaffine arc scores and biaffine label logits of the two-pipeline model.

use rand::Rng;

use super::{arc_mask, with_ones};
use crate::error::Result;
use crate::params::{Init, ParamGroup, ParamId, ParamRole, ParamStore};
use crate::tensor::{Graph, Var, MASK_VALUE};

#[derive(Clone, Debug)]
pub struct LocScorer {
    pub arc: ParamId,
    pub label: ParamId,
    pub bias: bool,
}

impl LocScorer {
    /// `x` and `y` are the arc and label specialization widths.
    pub fn new(store: &mut ParamStore, x: usize, y: usize, num_labels: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let (xb, yb) = if bias { (x + 1, y + 1) } else { (x, y) };
        let arc = store.add(
            "loc.arc",
            "biaffine",
            &[xb, xb],
            ParamRole::Biaffine,
            ParamGroup::Main,
            Init::Xavier { fan_in: xb, fan_out: xb },
            rng,
        );
        let label = store.add(
            "loc.label",
            "biaffine",
            &[yb, num_labels, yb],
            ParamRole::Biaffine,
            ParamGroup::Main,
            Init::Xavier { fan_in: yb, fan_out: yb },
            rng,
        );
        LocScorer { arc, label, bias }
    }

    fn augment(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.bias {
            with_ones(g, x)
        } else {
            Ok(x)
        }
    }

    /// `S[i][j] = h_iᵀ M m_j` over `[(n+1)×(n+1)]`, with the root column and
    /// diagonal set to the mask constant.
    pub fn arc_scores(&self, g: &mut Graph, store: &ParamStore, h: Var, m: Var) -> Result<Var> {
        let n = g.value(h).rows() - 1;
        let h = self.augment(g, h)?;
        let m = self.augment(g, m)?;
        let w = g.param(store, self.arc);
        let hw = g.matmul(h, w)?;
        let mt = g.transpose(m)?;
        let s = g.matmul(hw, mt)?;
        Ok(g.masked_fill(s, &arc_mask(n), MASK_VALUE)?)
    }

    /// Label logits `[t×labels]` for the arcs `(head, modifier)`.
    pub fn label_logits(&self, g: &mut Graph, store: &ParamStore, h: Var, m: Var, arcs: &[(usize, usize)]) -> Result<Var> {
        let heads: Vec<usize> = arcs.iter().map(|a| a.0).collect();
        let mods: Vec<usize> = arcs.iter().map(|a| a.1).collect();
        let h = self.augment(g, h)?;
        let m = self.augment(g, m)?;
        let hs = g.gather_rows(h, &heads)?;
        let ms = g.gather_rows(m, &mods)?;
        let l = g.param(store, self.label);
        Ok(g.row_bilinear(hs, l, ms)?)
    }
}
