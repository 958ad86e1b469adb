use super::ScoreMatrix;
use crate::conllu::is_tree;
use crate::error::{Error, Result};

/// Longest sentence the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_LEN: usize = 7;

/// Exhaustive search over all single-root trees (optionally projective
/// only). Ties keep the lexicographically smallest head array.
pub fn brute_force_best_tree(s: &ScoreMatrix, projective: bool) -> Result<(Vec<usize>, f64)> {
    let n = s.len();
    if n > BRUTE_FORCE_MAX_LEN {
        return Err(Error::Decode(format!(
            "brute force refuses n = {n} (limit {BRUTE_FORCE_MAX_LEN})"
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let mut heads = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        if heads.iter().filter(|&&h| h == 0).count() == 1
            && is_tree(&heads)
            && (!projective || is_projective(&heads))
        {
            let score = s.tree_score(&heads);
            if best.as_ref().is_none_or(|(_, b)| score > *b) {
                best = Some((heads.clone(), score));
            }
        }
        // odometer over (n+1)^n head arrays
        let mut i = n;
        loop {
            if i == 0 {
                return best.ok_or_else(|| Error::Decode("no tree has finite score".into()));
            }
            i -= 1;
            if heads[i] < n {
                heads[i] += 1;
                break;
            }
            heads[i] = 0;
        }
    }
}

/// No two arcs cross, counting arcs from the root at position 0.
pub fn is_projective(heads: &[usize]) -> bool {
    let spans: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(j, &h)| (h.min(j + 1), h.max(j + 1)))
        .collect();
    for (a, &(i, j)) in spans.iter().enumerate() {
        for &(k, l) in &spans[a + 1..] {
            if (i < k && k < j && j < l) || (k < i && i < l && l < j) {
                return false;
            }
        }
    }
    true
}
