//! Head-selection and labeling objectives.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var, MASK_VALUE};

/// Mean over modifiers `j = 1..=n` of the cross-entropy of
/// `softmax(S[·][j])` against the gold head. `scores` must already be
/// masked.
pub fn head_selection_loss(g: &mut Graph, scores: Var, gold_heads: &[usize]) -> Result<Var> {
    let n = gold_heads.len();
    if g.shape(scores) != [n + 1, n + 1] {
        return Err(Error::Eval(format!(
            "score matrix {:?} does not match {n} tokens",
            g.shape(scores)
        )));
    }
    for (jm1, &h) in gold_heads.iter().enumerate() {
        if h > n || g.value(scores).get(&[h, jm1 + 1]) <= MASK_VALUE / 2.0 {
            return Err(Error::Eval(format!("gold head {h} of token {} is masked", jm1 + 1)));
        }
    }
    let by_mod = g.transpose(scores)?;
    let mods: Vec<usize> = (1..=n).collect();
    let rows = g.gather_rows(by_mod, &mods)?;
    Ok(g.cross_entropy(rows, gold_heads)?)
}

/// Mean cross-entropy of label logits `[t×labels]`; zero when `t = 0`.
pub fn label_loss(g: &mut Graph, logits: Var, gold: &[usize]) -> Result<Var> {
    if gold.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    Ok(g.cross_entropy(logits, gold)?)
}
