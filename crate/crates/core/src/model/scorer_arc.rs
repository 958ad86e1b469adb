//! Arc vectors from a single biaffine tensor, with score, label and filter
//! heads reading from them.

use rand::Rng;

use super::{arc_mask, with_ones};
use crate::error::Result;
use crate::nn::{Linear, Mlp2, Placement};
use crate::params::{Init, ParamGroup, ParamId, ParamRole, ParamStore};
use crate::tensor::{Graph, Var, MASK_VALUE};

/// Arc vectors of one sentence: row `i·(n+1) + j` of `vectors` is the arc
/// `i → j`. Rows of invalid arcs (into the root, self-loops) are present
/// but never read.
#[derive(Clone, Copy, Debug)]
pub struct ArcVectorSet {
    pub vectors: Var,
    pub n: usize,
}

impl ArcVectorSet {
    pub fn row(&self, head: usize, dep: usize) -> usize {
        head * (self.n + 1) + dep
    }

    pub fn is_valid(head: usize, dep: usize) -> bool {
        dep != 0 && head != dep
    }
}

#[derive(Clone, Debug)]
pub struct ArcScorer {
    pub biaffine: ParamId,
    pub score: Mlp2,
    pub label: Mlp2,
    pub filter: Option<Linear>,
    pub bias: bool,
}

impl ArcScorer {
    /// `d` is the specialization width and `r` the arc vector width. The
    /// filter head exists only when refinement layers follow.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        r: usize,
        num_labels: usize,
        with_filter: bool,
        dropout: f64,
        layer_bias: bool,
        biaffine_bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let db = if biaffine_bias { d + 1 } else { d };
        let biaffine = store.add(
            "arc.biaffine",
            "tensor",
            &[db, r, db],
            ParamRole::Biaffine,
            ParamGroup::Main,
            Init::Xavier { fan_in: db, fan_out: db },
            rng,
        );
        let score = Mlp2::new(
            store,
            "arc.score",
            r,
            r / 2,
            1,
            dropout,
            Placement::new(ParamRole::ScoreHead, ParamGroup::Main, layer_bias),
            rng,
        );
        let label = Mlp2::new(
            store,
            "arc.label",
            r,
            2 * num_labels,
            num_labels,
            dropout,
            Placement::new(ParamRole::LabelHead, ParamGroup::Main, layer_bias),
            rng,
        );
        let filter = with_filter.then(|| {
            Linear::new(
                store,
                "arc.filter",
                r,
                1,
                Placement::new(ParamRole::Filter, ParamGroup::Main, layer_bias),
                rng,
            )
        });
        ArcScorer {
            biaffine,
            score,
            label,
            filter,
            bias: biaffine_bias,
        }
    }

    /// `v_ij = h_iᵀ R m_j` for every pair.
    pub fn arc_vectors(&self, g: &mut Graph, store: &ParamStore, h: Var, m: Var) -> Result<ArcVectorSet> {
        let n = g.value(h).rows() - 1;
        let (h, m) = if self.bias {
            (with_ones(g, h)?, with_ones(g, m)?)
        } else {
            (h, m)
        };
        let r = g.param(store, self.biaffine);
        let vectors = g.pairwise_bilinear(h, r, m)?;
        Ok(ArcVectorSet { vectors, n })
    }

    /// Masked score matrix `[(n+1)×(n+1)]` from `F_s`.
    pub fn scores(&self, g: &mut Graph, store: &ParamStore, arcs: &ArcVectorSet) -> Result<Var> {
        let size = arcs.n + 1;
        let s = self.score.forward(g, store, arcs.vectors)?;
        let s = g.reshape(s, &[size, size])?;
        Ok(g.masked_fill(s, &arc_mask(arcs.n), MASK_VALUE)?)
    }

    /// Label logits for the listed `(head, modifier)` arcs.
    pub fn label_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        arcs: &ArcVectorSet,
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let rows: Vec<usize> = pairs.iter().map(|&(h, d)| arcs.row(h, d)).collect();
        let v = g.gather_rows(arcs.vectors, &rows)?;
        Ok(self.label.forward(g, store, v)?)
    }

    /// Raw filter logits `[(n+1)²×1]`, unmasked.
    pub fn filter_logits(&self, g: &mut Graph, store: &ParamStore, arcs: &ArcVectorSet) -> Result<Option<Var>> {
        match &self.filter {
            Some(f) => Ok(Some(f.forward(g, store, arcs.vectors)?)),
            None => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn scorer(d: usize, r: usize, labels: usize, bias: bool) -> (ParamStore, ArcScorer) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = ArcScorer::new(&mut store, d, r, labels, true, 0.0, bias, false, &mut rng);
        (store, sc)
    }

    #[test]
    fn hand_computed_vectors() {
        let (mut store, sc) = scorer(1, 2, 1, false);
        *store.value_mut(sc.biaffine) = Tensor::new(vec![1, 2, 1], vec![2.0, -1.0]).unwrap();
        let mut g = Graph::eval();
        let h = g.constant(Tensor::from_rows(&[vec![3.0], vec![1.0]]).unwrap());
        let m = g.constant(Tensor::from_rows(&[vec![0.0], vec![5.0]]).unwrap());
        let arcs = sc.arc_vectors(&mut g, &store, h, m).unwrap();
        // arc 0 -> 1: 3 * [2, -1] * 5
        assert_eq!(g.value(arcs.vectors).row(arcs.row(0, 1)), &[30.0, -15.0]);
    }

    #[test]
    fn vectors_match_loops() {
        let (store, sc) = scorer(3, 4, 2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d, r) = (3, 3, 4);
        let (hv, mv) = (random(&mut rng, &[n + 1, d]), random(&mut rng, &[n + 1, d]));
        let mut g = Graph::eval();
        let h = g.constant(hv.clone());
        let m = g.constant(mv.clone());
        let arcs = sc.arc_vectors(&mut g, &store, h, m).unwrap();
        let t = store.value(sc.biaffine);
        for i in 0..=n {
            for j in 1..=n {
                for c in 0..r {
                    let mut expect = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            expect += hv.get(&[i, a]) * t.get(&[a, c, b]) * mv.get(&[j, b]);
                        }
                    }
                    let got = g.value(arcs.vectors).get(&[arcs.row(i, j), c]);
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_tensor_gives_constant_scores() {
        let (mut store, sc) = scorer(2, 4, 2, true);
        store.value_mut(sc.biaffine).data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::eval();
        let h = g.constant(random(&mut rng, &[4, 2]));
        let arcs = sc.arc_vectors(&mut g, &store, h, h).unwrap();
        let s = sc.scores(&mut g, &store, &arcs).unwrap();
        let vals: Vec<f64> = (0..4)
            .flat_map(|i| (1..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| g.value(s).get(&[i, j]))
            .collect();
        assert!(vals.iter().all(|&v| v == vals[0]));
    }

    #[test]
    fn head_parameter_counts() {
        let (store, _) = scorer(2, 4, 1, false);
        assert_eq!(store.numel_where(|p| p.role == ParamRole::ScoreHead), 4 * 2 + 2);
        let (store, _) = scorer(2, 2, 3, false);
        assert_eq!(store.numel_where(|p| p.role == ParamRole::LabelHead), 12 + 18);
    }

    #[test]
    fn score_head_is_linear_in_last_layer() {
        let (mut store, sc) = scorer(2, 4, 2, true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hv = random(&mut rng, &[4, 2]);
        let run = |store: &ParamStore| {
            let mut g = Graph::eval();
            let h = g.constant(hv.clone());
            let arcs = sc.arc_vectors(&mut g, store, h, h).unwrap();
            let s = sc.scores(&mut g, store, &arcs).unwrap();
            g.value(s).clone()
        };
        let before = run(&store);
        for id in [sc.score.output.weight, sc.score.output.bias.unwrap()] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= 2.5);
        }
        let after = run(&store);
        for i in 0..4 {
            for j in 1..4 {
                if i != j {
                    assert!((after.get(&[i, j]) - 2.5 * before.get(&[i, j])).abs() < 1e-12);
                }
            }
        }

        store.value_mut(sc.score.output.weight).data_mut().fill(0.0);
        store.value_mut(sc.score.output.bias.unwrap()).data_mut().fill(0.0);
        let zero = run(&store);
        assert_eq!(zero.get(&[0, 1]), 0.0);
    }

    #[test]
    fn score_and_label_share_vectors() {
        let (store, sc) = scorer(2, 4, 3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hv = random(&mut rng, &[3, 2]);
        let mut g = Graph::eval();
        let h = g.constant(hv);
        let arcs = sc.arc_vectors(&mut g, &store, h, h).unwrap();
        let bumped = g.scale(arcs.vectors, 1.5);
        let bumped = ArcVectorSet { vectors: bumped, n: arcs.n };
        let (s0, s1) = (sc.scores(&mut g, &store, &arcs).unwrap(), sc.scores(&mut g, &store, &bumped).unwrap());
        let (l0, l1) = (
            sc.label_logits(&mut g, &store, &arcs, &[(0, 1)]).unwrap(),
            sc.label_logits(&mut g, &store, &bumped, &[(0, 1)]).unwrap(),
        );
        assert!(g.value(s0).max_abs_diff(g.value(s1)) > 0.0);
        assert!(g.value(l0).max_abs_diff(g.value(l1)) > 0.0);
    }

    #[test]
    fn zero_label_head_is_uniform() {
        let (mut store, sc) = scorer(2, 4, 3, true);
        for id in [sc.label.output.weight, sc.label.output.bias.unwrap()] {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::eval();
        let h = g.constant(Tensor::full(&[3, 2], 0.3));
        let arcs = sc.arc_vectors(&mut g, &store, h, h).unwrap();
        let l = sc.label_logits(&mut g, &store, &arcs, &[(0, 1), (2, 1)]).unwrap();
        let p = g.softmax(l).unwrap();
        assert!(g.value(p).data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }
}
