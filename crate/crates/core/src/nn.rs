//! Layers built on the tensor engine.

use rand::Rng;

use crate::params::{Init, ParamGroup, ParamId, ParamRole, ParamStore};
use crate::tensor::{Graph, Result, Tensor, Var};

/// Where a layer's parameters live and how they are accounted.
#[derive(Clone, Copy, Debug)]
pub struct Placement {
    pub role: ParamRole,
    pub group: ParamGroup,
    pub bias: bool,
}

impl Placement {
    pub fn new(role: ParamRole, group: ParamGroup, bias: bool) -> Self {
        Placement { role, group, bias }
    }
}

/// `x · W + b` with `W: [in×out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        module: &str,
        input: usize,
        output: usize,
        place: Placement,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            module,
            "weight",
            &[input, output],
            place.role,
            place.group,
            Init::Xavier {
                fan_in: input,
                fan_out: output,
            },
            rng,
        );
        let bias = place.bias.then(|| {
            store.add(module, "bias", &[output], ParamRole::Bias, place.group, Init::Zeros, rng)
        });
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Single hidden-free layer: linear, ReLU, dropout.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub linear: Linear,
    pub dropout: f64,
}

impl Ffn {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.linear.forward(g, store, x)?;
        let y = g.relu(y);
        Ok(g.dropout(y, self.dropout))
    }
}

/// Two-layer perceptron: linear, ReLU, dropout, linear.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl Mlp2 {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        module: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        place: Placement,
        rng: &mut impl Rng,
    ) -> Self {
        Mlp2 {
            hidden: Linear::new(store, &format!("{module}.0"), input, hidden, place, rng),
            output: Linear::new(store, &format!("{module}.1"), hidden, output, place, rng),
            dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.hidden.forward(g, store, x)?;
        let y = g.relu(y);
        let y = g.dropout(y, self.dropout);
        self.output.forward(g, store, y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, module: &str, width: usize, group: ParamGroup, rng: &mut impl Rng) -> Self {
        LayerNorm {
            gain: store.add(module, "gain", &[width], ParamRole::Norm, group, Init::Ones, rng),
            bias: store.add(module, "bias", &[width], ParamRole::Norm, group, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Attention head count for width `r`: the divisor of `r` closest to
/// `r / 16`, preferring the larger divisor on ties.
pub fn num_heads(r: usize) -> usize {
    assert!(r >= 1, "width must be positive");
    let target = r as f64 / 16.0;
    (1..=r)
        .filter(|d| r.is_multiple_of(*d))
        .min_by(|&a, &b| {
            let (da, db) = ((a as f64 - target).abs(), (b as f64 - target).abs());
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .expect("1 divides r")
}

/// Pre-norm transformer encoder layer.
///
/// Self-attention uses a single learned query projection; keys and values
/// are the normalized inputs split across heads. The position-wise
/// feed-forward block has hidden width `4·width` and GELU. Without biases
/// the layer holds exactly `9·width²` weights.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub width: usize,
    pub heads: usize,
    pub norm_attn: LayerNorm,
    pub query: Linear,
    pub norm_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        module: &str,
        width: usize,
        heads: usize,
        place: Placement,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads >= 1 && width.is_multiple_of(heads), "heads must divide width");
        TransformerBlock {
            width,
            heads,
            norm_attn: LayerNorm::new(store, &format!("{module}.norm_attn"), width, place.group, rng),
            query: Linear::new(store, &format!("{module}.query"), width, width, place, rng),
            norm_ffn: LayerNorm::new(store, &format!("{module}.norm_ffn"), width, place.group, rng),
            ffn_in: Linear::new(store, &format!("{module}.ffn_in"), width, 4 * width, place, rng),
            ffn_out: Linear::new(store, &format!("{module}.ffn_out"), 4 * width, width, place, rng),
        }
    }

    /// `x: [t×width]` to `[t×width]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let t = g.value(x).rows();
        let a = self.norm_attn.forward(g, store, x)?;
        let q = self.query.forward(g, store, a)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh) = if self.heads == 1 {
                (q, a)
            } else {
                (g.slice_cols(q, h * dh, dh)?, g.slice_cols(a, h * dh, dh)?)
            };
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            g.record_attention(t, t);
            let scores = g.scale(scores, scale);
            let weights = g.softmax(scores)?;
            outputs.push(g.matmul(weights, kh)?);
        }
        let attended = if outputs.len() == 1 {
            outputs[0]
        } else {
            g.concat_cols(&outputs)?
        };
        let x1 = g.add(x, attended)?;
        let b = self.norm_ffn.forward(g, store, x1)?;
        let hidden = self.ffn_in.forward(g, store, b)?;
        let hidden = g.gelu(hidden);
        let f = self.ffn_out.forward(g, store, hidden)?;
        g.add(x1, f)
    }
}

/// Fixed sinusoidal position encodings, `[len×width]`.
pub fn sinusoidal_positions(len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; len * width];
    for pos in 0..len {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / width as f64);
            data[pos * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, width], data).expect("shape")
}
