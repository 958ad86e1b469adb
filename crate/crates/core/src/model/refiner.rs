//! Top-k arc filtering with a straight-through gradient, and transformer
//! refinement of the kept arc vectors.

use rand::Rng;

use super::scorer_arc::ArcVectorSet;
use crate::error::Result;
use crate::nn::{num_heads, Placement, TransformerBlock};
use crate::params::{ParamGroup, ParamRole, ParamStore};
use crate::tensor::{argsort_descending, Graph, Tensor, Var, MASK_VALUE};

/// Result of the filter for one sentence.
#[derive(Clone, Debug)]
pub struct FilterOutput {
    /// `kept[j-1]`: heads kept for modifier `j`, most probable first.
    pub kept: Vec<Vec<usize>>,
    /// Rows of the arc vector set holding the kept arcs, modifier-major.
    pub kept_rows: Vec<usize>,
    /// `[t×r]`; forward equals the kept rows of `v⁰`, backward follows the
    /// expectation under the filter distribution.
    pub kept_vectors: Var,
    /// Masked filter logits `[n×(n+1)]` (modifier rows, head columns),
    /// before noise.
    pub logits: Var,
    /// Filter distribution `[n×(n+1)]`.
    pub probs: Var,
    /// `E_p[v_hj]` per modifier, `[n×r]`.
    pub expectation: Var,
}

impl FilterOutput {
    /// Snapshot of the selection used to build a surrogate loss whose true
    /// gradient equals the straight-through gradient.
    pub fn freeze(&self, g: &Graph) -> FrozenFilter {
        FrozenFilter {
            kept: self.kept.clone(),
            hard: g.value(self.kept_vectors).clone(),
            expectation: g.value(self.expectation).clone(),
        }
    }

    /// Every modifier's kept heads, discarded arcs being the rest.
    pub fn is_kept(&self, head: usize, dep: usize) -> bool {
        self.kept[dep - 1].contains(&head)
    }
}

/// Selection frozen at a reference parameter point.
///
/// Running the filter with this in place yields
/// `kept = hard₀ + E(θ) − E(θ₀)`: the kept lists and hard rows stay fixed,
/// and the function's exact gradient is the expectation path.
#[derive(Clone, Debug)]
pub struct FrozenFilter {
    pub kept: Vec<Vec<usize>>,
    pub hard: Tensor,
    pub expectation: Tensor,
}

#[derive(Clone, Debug)]
pub struct Refiner {
    pub layers: Vec<TransformerBlock>,
    pub k: usize,
    pub gumbel_scale: f64,
    pub train_noise: bool,
}

impl Refiner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        r: usize,
        layers: usize,
        k: usize,
        gumbel_scale: f64,
        train_noise: bool,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let place = Placement::new(ParamRole::Transformer, ParamGroup::Transformer, bias);
        let heads = num_heads(r);
        Refiner {
            layers: (0..layers)
                .map(|l| TransformerBlock::new(store, &format!("refiner.{l}"), r, heads, place, rng))
                .collect(),
            k,
            gumbel_scale,
            train_noise,
        }
    }

    /// Filters `v⁰` given raw filter logits `[(n+1)²×1]`.
    ///
    /// Per modifier `j`, the logits over heads are masked, perturbed with
    /// Gumbel noise in training, and normalized; the `min(k, n)` most
    /// probable heads are kept (ties to the smaller head index).
    pub fn filter(&self, g: &mut Graph, v0: &ArcVectorSet, raw_logits: Var, frozen: Option<&FrozenFilter>) -> Result<FilterOutput> {
        let n = v0.n;
        let size = n + 1;
        let grid = g.reshape(raw_logits, &[size, size])?;
        let by_mod = g.transpose(grid)?;
        let mods: Vec<usize> = (1..=n).collect();
        let rows = g.gather_rows(by_mod, &mods)?;
        // row j-1, column h: invalid when h == j
        let mask: Vec<bool> = (1..=n).flat_map(|j| (0..size).map(move |h| h == j)).collect();
        let logits = g.masked_fill(rows, &mask, MASK_VALUE)?;

        let noisy = if g.is_train() && self.train_noise && self.gumbel_scale > 0.0 {
            let scale = self.gumbel_scale;
            let noise: Vec<f64> = (0..n * size)
                .map(|_| {
                    let u: f64 = g.rng().gen::<f64>().max(f64::MIN_POSITIVE);
                    -(-u.ln()).ln() * scale
                })
                .collect();
            let noise = g.constant(Tensor::new(vec![n, size], noise)?);
            g.add(logits, noise)?
        } else {
            logits
        };
        let probs = g.softmax(noisy)?;

        let order: Vec<usize> = (1..=n).flat_map(|j| (0..size).map(move |h| v0.row(h, j))).collect();
        let grouped = g.gather_rows(v0.vectors, &order)?;
        let expectation = g.grouped_weighted_sum(probs, grouped)?;

        let keep = self.k.min(n);
        let kept: Vec<Vec<usize>> = match frozen {
            Some(f) => f.kept.clone(),
            None => {
                let p = g.value(probs);
                (1..=n)
                    .map(|j| {
                        argsort_descending(p.row(j - 1))
                            .into_iter()
                            .filter(|&h| h != j)
                            .take(keep)
                            .collect()
                    })
                    .collect()
            }
        };
        let kept_rows: Vec<usize> = kept
            .iter()
            .enumerate()
            .flat_map(|(jm1, heads)| heads.iter().map(move |&h| v0.row(h, jm1 + 1)))
            .collect();
        let soft_index: Vec<usize> = kept
            .iter()
            .enumerate()
            .flat_map(|(jm1, heads)| std::iter::repeat_n(jm1, heads.len()))
            .collect();
        let soft = g.gather_rows(expectation, &soft_index)?;
        let kept_vectors = match frozen {
            None => {
                let hard = g.gather_rows(v0.vectors, &kept_rows)?;
                g.straight_through(hard, soft)?
            }
            Some(f) => {
                let hard = g.constant(f.hard.clone());
                let e0 = g.constant(f.expectation.clone());
                let e0 = g.gather_rows(e0, &soft_index)?;
                let delta = g.sub(soft, e0)?;
                g.add(hard, delta)?
            }
        };
        Ok(FilterOutput {
            kept,
            kept_rows,
            kept_vectors,
            logits,
            probs,
            expectation,
        })
    }

    /// Runs the kept vectors jointly through every layer and writes them
    /// back; discarded arcs keep their `v⁰` rows. With no layers the input
    /// is returned unchanged.
    pub fn refine(&self, g: &mut Graph, store: &ParamStore, v0: &ArcVectorSet, filter: &FilterOutput) -> Result<ArcVectorSet> {
        if self.layers.is_empty() {
            return Ok(*v0);
        }
        let mut x = filter.kept_vectors;
        for layer in &self.layers {
            x = layer.forward(g, store, x)?;
        }
        let vectors = g.replace_rows(v0.vectors, &filter.kept_rows, x)?;
        Ok(ArcVectorSet { vectors, n: v0.n })
    }
}
