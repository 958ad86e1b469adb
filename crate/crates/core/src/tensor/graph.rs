use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, Tensor, TensorError};
use crate::params::{ParamId, ParamStore};

/// Large negative constant used for masked logits inside differentiable
/// paths. True `-inf` is reserved for decoding.
pub const MASK_VALUE: f64 = -1e9;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Counters collected while building a graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GraphStats {
    /// Largest single attention score matrix (rows × cols) created.
    pub max_attention_entries: usize,
    /// Sum of all attention score matrix sizes, over heads and layers.
    pub total_attention_entries: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    ReplaceRows {
        base: Var,
        index: Vec<usize>,
        src: Var,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    PairwiseBilinear {
        h: Var,
        t: Var,
        m: Var,
        partial: Vec<f64>,
    },
    RowBilinear {
        h: Var,
        t: Var,
        m: Var,
        partial: Vec<f64>,
    },
    GroupedWeightedSum {
        weights: Var,
        values: Var,
    },
    MaskedFill(Var, Vec<bool>),
    StraightThrough {
        soft: Var,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations.
///
/// Nodes are appended in creation order, which is a topological order of
/// the computation; [`Graph::backward`] walks it in reverse.
pub struct Graph {
    nodes: Vec<Node>,
    mode: Mode,
    rng: ChaCha8Rng,
    params: HashMap<ParamId, Var>,
    stats: GraphStats,
}

impl Graph {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: HashMap::new(),
            stats: GraphStats::default(),
        }
    }

    pub fn eval() -> Self {
        Graph::new(Mode::Eval, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn stats(&self) -> GraphStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn record_attention(&mut self, rows: usize, cols: usize) {
        let entries = rows * cols;
        self.stats.max_attention_entries = self.stats.max_attention_entries.max(entries);
        self.stats.total_attention_entries += entries;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any
    /// flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id
    /// return the same node, so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Parameters that were pulled into this graph.
    pub fn touched_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.params.keys().copied().collect();
        ids.sort();
        ids
    }

    /// Parameter gradients after backward; parameters that received no
    /// gradient are omitted.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<(ParamId, &[f64])> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let va = self.value(a);
        Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Adds vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).numel() != c {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bv = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bv[i % c];
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.map(a, |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Inverted dropout. Identity when `p == 0` or in eval mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Var {
        if self.mode == Mode::Eval || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let value = Tensor::new(vec![c, r], transpose_data(self.value(a).data(), r, c))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Softmax over the last axis, stabilized by max subtraction. Entries at
    /// `-inf` get probability zero; a row with no finite entry is an error.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let c = va.cols();
        let mut out = va.data().to_vec();
        for (row, chunk) in out.chunks_mut(c).enumerate() {
            softmax_in_place(chunk).ok_or(TensorError::AllMasked { row })?;
        }
        let value = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Mean over rows of `-log softmax(logits[row])[targets[row]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, c) = (vl.rows(), vl.cols());
        if targets.len() != rows {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0;
        for (row, (chunk, &t)) in probs.chunks_mut(c).zip(targets).enumerate() {
            if t >= c {
                return Err(TensorError::Index { index: t, len: c });
            }
            let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(TensorError::AllMasked { row });
            }
            let lse = max + chunk.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - chunk[t];
            for x in chunk.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let denom = rows.max(1) as f64;
        let value = Tensor::scalar(loss / denom);
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Tensor::scalar(va.data().iter().sum::<f64>() / va.numel().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// Row-wise layer normalization over the last axis with eps `1e-5`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let vx = self.value(x);
        let c = vx.cols();
        if c < 2 || self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = vx.rows();
        let mut xhat = vec![0.0; vx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; vx.numel()];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                let xh = (row[i] - mean) * is;
                xhat[r * c + i] = xh;
                out[r * c + i] = xh * g[i] + b[i];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (rows, c) = (vt.rows(), vt.cols());
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= rows {
                return Err(TensorError::Index {
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(vt.row(i));
        }
        let value = Tensor::new(vec![index.len(), c], out)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Gather(table, index.to_vec()), rg))
    }

    /// Embedding lookup; alias of [`Graph::gather_rows`].
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Copy of `base` with rows `index[t]` replaced by row `t` of `src`.
    /// Indices must be distinct.
    pub fn replace_rows(&mut self, base: Var, index: &[usize], src: Var) -> Result<Var> {
        let (vb, vs) = (self.value(base), self.value(src));
        if vb.cols() != vs.cols() || vs.rows() != index.len() {
            return Err(TensorError::Shape {
                op: "replace_rows",
                lhs: vb.shape().to_vec(),
                rhs: vs.shape().to_vec(),
            });
        }
        let c = vb.cols();
        let mut seen = vec![false; vb.rows()];
        let mut out = vb.data().to_vec();
        for (t, &i) in index.iter().enumerate() {
            if i >= seen.len() {
                return Err(TensorError::Index {
                    index: i,
                    len: seen.len(),
                });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(TensorError::Invalid(format!("replace_rows: duplicate row {i}")));
            }
            out[i * c..(i + 1) * c].copy_from_slice(vs.row(t));
        }
        let value = Tensor::new(vb.shape().to_vec(), out)?;
        let rg = self.rg(base) || self.rg(src);
        Ok(self.push(
            value,
            Op::ReplaceRows {
                base,
                index: index.to_vec(),
                src,
            },
            rg,
        ))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| TensorError::Invalid("concat_cols: no inputs".into()))?;
        for &p in parts {
            if self.value(p).rows() != rows || self.shape(p).len() != 2 {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let (rows, c) = (vx.rows(), vx.cols());
        if start + len > c || vx.shape().len() != 2 {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: vx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&vx.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    fn bilinear_dims(&self, op: &'static str, h: Var, t: Var, m: Var) -> Result<(usize, usize, usize)> {
        let (sh, st, sm) = (self.shape(h), self.shape(t), self.shape(m));
        let ok = sh.len() == 2
            && sm.len() == 2
            && st.len() == 3
            && sh[1] == st[0]
            && sm[1] == st[2];
        if !ok {
            return Err(TensorError::Shape {
                op,
                lhs: sh.to_vec(),
                rhs: st.to_vec(),
            });
        }
        Ok((st[0], st[1], st[2]))
    }

    /// For `h: [a×p]`, `t: [p×r×q]`, `m: [b×q]`, returns `[(a·b)×r]` whose
    /// row `i·b + j` is `Σ h[i][x]·t[x][c][y]·m[j][y]`.
    pub fn pairwise_bilinear(&mut self, h: Var, t: Var, m: Var) -> Result<Var> {
        let (p, r, q) = self.bilinear_dims("pairwise_bilinear", h, t, m)?;
        let a = self.value(h).rows();
        let b = self.value(m).rows();
        let mut partial = vec![0.0; a * r * q];
        matmul_into(self.value(h).data(), self.value(t).data(), &mut partial, a, p, r * q);
        let md = self.value(m).data();
        let mut out = vec![0.0; a * b * r];
        for i in 0..a {
            for j in 0..b {
                let mj = &md[j * q..(j + 1) * q];
                let o = &mut out[(i * b + j) * r..(i * b + j + 1) * r];
                for (c, oc) in o.iter_mut().enumerate() {
                    let pr = &partial[(i * r + c) * q..(i * r + c + 1) * q];
                    *oc = dot(pr, mj);
                }
            }
        }
        let value = Tensor::new(vec![a * b, r], out)?;
        let rg = self.rg(h) || self.rg(t) || self.rg(m);
        Ok(self.push(value, Op::PairwiseBilinear { h, t, m, partial }, rg))
    }

    /// Row-aligned bilinear: row `s` of the `[rows×r]` result is
    /// `Σ h[s][x]·t[x][c][y]·m[s][y]`.
    pub fn row_bilinear(&mut self, h: Var, t: Var, m: Var) -> Result<Var> {
        let (p, r, q) = self.bilinear_dims("row_bilinear", h, t, m)?;
        let rows = self.value(h).rows();
        if self.value(m).rows() != rows {
            return Err(TensorError::Shape {
                op: "row_bilinear",
                lhs: self.shape(h).to_vec(),
                rhs: self.shape(m).to_vec(),
            });
        }
        let mut partial = vec![0.0; rows * r * q];
        matmul_into(self.value(h).data(), self.value(t).data(), &mut partial, rows, p, r * q);
        let md = self.value(m).data();
        let mut out = vec![0.0; rows * r];
        for s in 0..rows {
            let ms = &md[s * q..(s + 1) * q];
            for c in 0..r {
                out[s * r + c] = dot(&partial[(s * r + c) * q..(s * r + c + 1) * q], ms);
            }
        }
        let value = Tensor::new(vec![rows, r], out)?;
        let rg = self.rg(h) || self.rg(t) || self.rg(m);
        Ok(self.push(value, Op::RowBilinear { h, t, m, partial }, rg))
    }

    /// `out[c] = Σ_{a,b} h[a]·t[a][c][b]·m[b]` for vectors `h`, `m`.
    pub fn bilinear(&mut self, h: Var, t: Var, m: Var) -> Result<Var> {
        let dh = self.value(h).numel();
        let dm = self.value(m).numel();
        let h2 = self.reshape(h, &[1, dh])?;
        let m2 = self.reshape(m, &[1, dm])?;
        let out = self.row_bilinear(h2, t, m2)?;
        let r = self.value(out).numel();
        self.reshape(out, &[r])
    }

    /// For `weights: [g×s]` and `values: [(g·s)×c]`, row `j` of the result is
    /// `Σ_i weights[j][i]·values[j·s + i]`.
    pub fn grouped_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (vw, vv) = (self.value(weights), self.value(values));
        let (groups, size) = (vw.rows(), vw.cols());
        if vv.rows() != groups * size {
            return Err(TensorError::Shape {
                op: "grouped_weighted_sum",
                lhs: vw.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let c = vv.cols();
        let mut out = vec![0.0; groups * c];
        for j in 0..groups {
            let o = &mut out[j * c..(j + 1) * c];
            for i in 0..size {
                let w = vw.data()[j * size + i];
                for (oc, v) in o.iter_mut().zip(vv.row(j * size + i)) {
                    *oc += w * v;
                }
            }
        }
        let value = Tensor::new(vec![groups, c], out)?;
        let rg = self.rg(weights) || self.rg(values);
        Ok(self.push(value, Op::GroupedWeightedSum { weights, values }, rg))
    }

    /// Overwrites entries where `mask` is true with `fill`; no gradient
    /// flows into the overwritten entries.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], fill: f64) -> Result<Var> {
        let vx = self.value(x);
        if mask.len() != vx.numel() {
            return Err(TensorError::Shape {
                op: "masked_fill",
                lhs: vx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = vx
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaskedFill(x, mask.to_vec()), rg))
    }

    /// Forward identity; no gradient flows back through the result.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::Leaf, false)
    }

    /// Straight-through combination `hard - detach(soft) + soft`.
    ///
    /// The forward value is `hard` exactly (bitwise); the backward pass
    /// routes the full upstream gradient into `soft` and none into `hard`.
    pub fn straight_through(&mut self, hard: Var, soft: Var) -> Result<Var> {
        self.same_shape("straight_through", hard, soft)?;
        let value = self.value(hard).clone();
        let rg = self.rg(soft);
        Ok(self.push(value, Op::StraightThrough { soft }, rg))
    }

    /// Backpropagates from the scalar `loss`, seeding its gradient with 1.
    /// Gradients from earlier calls are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(idx, &grad);
            self.nodes[idx].grad = Some(grad);
            for (v, g) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, grad.to_vec()), (*b, grad.to_vec())],
            Op::Sub(a, b) => vec![(*a, grad.to_vec()), (*b, grad.iter().map(|g| -g).collect())],
            Op::Mul(a, b) => {
                let ga = grad.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                let gb = grad.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddRow(x, b) => {
                let c = self.nodes[b.0].value.numel();
                let mut gb = vec![0.0; c];
                for (i, g) in grad.iter().enumerate() {
                    gb[i % c] += g;
                }
                vec![(*x, grad.to_vec()), (*b, gb)]
            }
            Op::Scale(a, c) => vec![(*a, grad.iter().map(|g| g * c).collect())],
            Op::Relu(a) => {
                let g = grad
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, g)]
            }
            Op::Gelu(a) => {
                let g = grad.iter().zip(val(*a)).map(|(g, &x)| g * gelu_grad(x)).collect();
                vec![(*a, g)]
            }
            Op::Dropout(a, mask) => vec![(*a, grad.iter().zip(mask).map(|(g, m)| g * m).collect())],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = Vec::with_capacity(2);
                if self.rg(*a) {
                    let bt = transpose_data(val(*b), k, n);
                    let mut ga = vec![0.0; m * k];
                    matmul_into(grad, &bt, &mut ga, m, n, k);
                    out.push((*a, ga));
                }
                if self.rg(*b) {
                    let at = transpose_data(val(*a), m, k);
                    let mut gb = vec![0.0; k * n];
                    matmul_into(&at, grad, &mut gb, k, m, n);
                    out.push((*b, gb));
                }
                out
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                vec![(*a, transpose_data(grad, s[0], s[1]))]
            }
            Op::Reshape(a) => vec![(*a, grad.to_vec())],
            Op::Softmax(a) => {
                let c = node.value.cols();
                let y = node.value.data();
                let mut g = vec![0.0; y.len()];
                for ((gr, yr), outr) in grad.chunks(c).zip(y.chunks(c)).zip(g.chunks_mut(c)) {
                    let dotp: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for i in 0..c {
                        outr[i] = yr[i] * (gr[i] - dotp);
                    }
                }
                vec![(*a, g)]
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.nodes[logits.0].value.cols();
                let scale = grad[0] / targets.len().max(1) as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &t) in targets.iter().enumerate() {
                    g[row * c + t] -= scale;
                }
                vec![(*logits, g)]
            }
            Op::Sum(a) => vec![(*a, vec![grad[0]; self.nodes[a.0].value.numel()])],
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                vec![(*a, vec![grad[0] / n as f64; n])]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = node.value.cols();
                let gv = val(*gain);
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for (r, &is) in inv_std.iter().enumerate() {
                    let dy = &grad[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for i in 0..c {
                        let dxh = dy[i] * gv[i];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[i];
                        gg[i] += dy[i] * xh[i];
                        gb[i] += dy[i];
                    }
                    let n = c as f64;
                    for i in 0..c {
                        let dxh = dy[i] * gv[i];
                        gx[r * c + i] = is / n * (n * dxh - sum_dxh - xh[i] * sum_dxh_xh);
                    }
                }
                vec![(*x, gx), (*gain, gg), (*bias, gb)]
            }
            Op::Gather(table, index) => {
                let tv = &self.nodes[table.0].value;
                let c = tv.cols();
                let mut g = vec![0.0; tv.numel()];
                for (t, &i) in index.iter().enumerate() {
                    for k in 0..c {
                        g[i * c + k] += grad[t * c + k];
                    }
                }
                vec![(*table, g)]
            }
            Op::ReplaceRows { base, index, src } => {
                let c = node.value.cols();
                let mut gbase = grad.to_vec();
                let mut gsrc = vec![0.0; index.len() * c];
                for (t, &i) in index.iter().enumerate() {
                    gsrc[t * c..(t + 1) * c].copy_from_slice(&grad[i * c..(i + 1) * c]);
                    gbase[i * c..(i + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                }
                vec![(*base, gbase), (*src, gsrc)]
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let c = self.nodes[p.0].value.cols();
                    let mut g = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        g.extend_from_slice(&grad[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    out.push((p, g));
                }
                out
            }
            Op::SliceCols { x, start } => {
                let xv = &self.nodes[x.0].value;
                let (rows, c) = (xv.rows(), xv.cols());
                let len = node.value.cols();
                let mut g = vec![0.0; rows * c];
                for r in 0..rows {
                    g[r * c + start..r * c + start + len]
                        .copy_from_slice(&grad[r * len..(r + 1) * len]);
                }
                vec![(*x, g)]
            }
            Op::PairwiseBilinear { h, t, m, partial } => {
                let st = self.nodes[t.0].value.shape();
                let (p, r, q) = (st[0], st[1], st[2]);
                let a = self.nodes[h.0].value.rows();
                let b = self.nodes[m.0].value.rows();
                let md = val(*m);
                // d partial[i][c][y] = Σ_j grad[i·b+j][c]·m[j][y]
                let mut gpartial = vec![0.0; a * r * q];
                let mut gm = vec![0.0; b * q];
                for i in 0..a {
                    for j in 0..b {
                        let gr = &grad[(i * b + j) * r..(i * b + j + 1) * r];
                        let mj = &md[j * q..(j + 1) * q];
                        for (c, &g) in gr.iter().enumerate() {
                            if g == 0.0 {
                                continue;
                            }
                            let base = (i * r + c) * q;
                            for y in 0..q {
                                gpartial[base + y] += g * mj[y];
                                gm[j * q + y] += g * partial[base + y];
                            }
                        }
                    }
                }
                bilinear_input_grads(self, *h, *t, *m, gpartial, gm, a, p, r * q)
            }
            Op::RowBilinear { h, t, m, partial } => {
                let st = self.nodes[t.0].value.shape();
                let (p, r, q) = (st[0], st[1], st[2]);
                let rows = self.nodes[h.0].value.rows();
                let md = val(*m);
                let mut gpartial = vec![0.0; rows * r * q];
                let mut gm = vec![0.0; rows * q];
                for s in 0..rows {
                    for c in 0..r {
                        let g = grad[s * r + c];
                        let base = (s * r + c) * q;
                        for y in 0..q {
                            gpartial[base + y] += g * md[s * q + y];
                            gm[s * q + y] += g * partial[base + y];
                        }
                    }
                }
                bilinear_input_grads(self, *h, *t, *m, gpartial, gm, rows, p, r * q)
            }
            Op::GroupedWeightedSum { weights, values } => {
                let wv = &self.nodes[weights.0].value;
                let vv = &self.nodes[values.0].value;
                let (groups, size) = (wv.rows(), wv.cols());
                let c = vv.cols();
                let mut gw = vec![0.0; groups * size];
                let mut gv = vec![0.0; vv.numel()];
                for j in 0..groups {
                    let go = &grad[j * c..(j + 1) * c];
                    for i in 0..size {
                        let row = j * size + i;
                        gw[j * size + i] = dot(go, vv.row(row));
                        let w = wv.data()[j * size + i];
                        for k in 0..c {
                            gv[row * c + k] = w * go[k];
                        }
                    }
                }
                vec![(*weights, gw), (*values, gv)]
            }
            Op::MaskedFill(x, mask) => {
                let g = grad
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect();
                vec![(*x, g)]
            }
            Op::StraightThrough { soft } => vec![(*soft, grad.to_vec())],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bilinear_input_grads(
    g: &Graph,
    h: Var,
    t: Var,
    m: Var,
    gpartial: Vec<f64>,
    gm: Vec<f64>,
    rows: usize,
    p: usize,
    rq: usize,
) -> Vec<(Var, Vec<f64>)> {
    let hv = g.nodes[h.0].value.data();
    let tv = g.nodes[t.0].value.data();
    let mut out = Vec::with_capacity(3);
    if g.rg(h) {
        // partial = H · T2 with T2: [p × rq]
        let t2t = transpose_data(tv, p, rq);
        let mut gh = vec![0.0; rows * p];
        matmul_into(&gpartial, &t2t, &mut gh, rows, rq, p);
        out.push((h, gh));
    }
    if g.rg(t) {
        let ht = transpose_data(hv, rows, p);
        let mut gt = vec![0.0; p * rq];
        matmul_into(&ht, &gpartial, &mut gt, p, rows, rq);
        out.push((t, gt));
    }
    out.push((m, gm));
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m×n] = a[m×k] · b[k×n]`, overwriting `out`.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

fn transpose_data(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Numerically stable in-place softmax; `None` if no entry is finite.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> Option<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    row.iter_mut().for_each(|x| *x /= total);
    Some(())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}
