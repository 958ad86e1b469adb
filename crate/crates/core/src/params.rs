//! Named parameter registry shared by all model components.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is for. Used for parameter accounting and for
/// checking which pipelines share weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamRole {
    Embedding,
    Context,
    Specialize,
    Biaffine,
    ScoreHead,
    LabelHead,
    Filter,
    Transformer,
    Norm,
    Bias,
}

/// Optimizer group; the arc transformer has its own learning-rate schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Main,
    Transformer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    /// Owning module, e.g. `spec.arc_head`.
    pub module: String,
    pub role: ParamRole,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// How parameters are initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    Uniform(f64),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn add(
        &mut self,
        module: &str,
        name: &str,
        shape: &[usize],
        role: ParamRole,
        group: ParamGroup,
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
        };
        self.params.push(Param {
            name: format!("{module}.{name}"),
            module: module.to_string(),
            role,
            group,
            value: Tensor::new(shape.to_vec(), data).expect("shape product"),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn numel_where(&self, pred: impl Fn(&Param) -> bool) -> usize {
        self.params.iter().filter(|p| pred(p)).map(|p| p.value.numel()).sum()
    }

    /// Tally of the parameters covered by the closed-form parameter-count
    /// formulas: everything downstream of the word embeddings, excluding
    /// biases, normalization gains, and the arc filter head.
    pub fn formula_tally(&self) -> usize {
        self.numel_where(|p| {
            !matches!(
                p.role,
                ParamRole::Embedding
                    | ParamRole::Context
                    | ParamRole::Norm
                    | ParamRole::Bias
                    | ParamRole::Filter
            )
        })
    }

    /// Distinct modules owning weights with the given role.
    pub fn modules_with_role(&self, role: ParamRole) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in self.params.iter().filter(|p| p.role == role) {
            if !out.contains(&p.module.as_str()) {
                out.push(&p.module);
            }
        }
        out
    }

    /// All parameter values flattened in registry order.
    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flat`].
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.numel(), "flat parameter length");
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}
