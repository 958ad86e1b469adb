use super::ScoreMatrix;

/// Maximum spanning arborescence rooted at 0 with exactly one root child.
///
/// Runs Chu-Liu-Edmonds once; if the unconstrained optimum attaches more
/// than one token to the root, every root child is forced in turn (all
/// other root arcs removed) and the best constrained tree is kept, ties
/// going to the smaller child. That costs up to `n` extra runs.
pub fn cle(s: &ScoreMatrix) -> Vec<usize> {
    let n = s.len();
    if n == 0 {
        return Vec::new();
    }
    let rows = s.rows();
    let heads = arborescence(&rows);
    if heads.iter().filter(|&&h| h == 0).count() == 1 {
        return heads;
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for child in 1..=n {
        if s.get(0, child) == f64::NEG_INFINITY {
            continue;
        }
        let mut forced = rows.clone();
        for (d, v) in forced[0].iter_mut().enumerate() {
            if d != child {
                *v = f64::NEG_INFINITY;
            }
        }
        let candidate = arborescence(&forced);
        let score = s.tree_score(&candidate);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, candidate));
        }
    }
    best.map(|(_, h)| h).unwrap_or(heads)
}

/// Unconstrained Chu-Liu-Edmonds on a dense matrix whose node 0 is the
/// root. Returns the head of every node `1..len`.
fn arborescence(scores: &[Vec<f64>]) -> Vec<usize> {
    let size = scores.len();
    let mut head = vec![0usize; size];
    for v in 1..size {
        let mut best: Option<f64> = None;
        for (u, row) in scores.iter().enumerate() {
            if u != v && best.is_none_or(|b| row[v] > b) {
                best = Some(row[v]);
                head[v] = u;
            }
        }
    }

    let Some(cycle) = find_cycle(&head) else {
        return head[1..].to_vec();
    };

    let in_cycle: Vec<bool> = (0..size).map(|v| cycle.contains(&v)).collect();
    // renumber: outside nodes keep relative order, the cycle becomes the last node
    let mut map = vec![usize::MAX; size];
    let mut outside = Vec::new();
    for v in 0..size {
        if !in_cycle[v] {
            map[v] = outside.len();
            outside.push(v);
        }
    }
    let c = outside.len();
    let mut reduced = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    let mut enter = vec![0usize; c + 1];
    let mut exit = vec![0usize; c + 1];
    for (a, &u) in outside.iter().enumerate() {
        for (b, &w) in outside.iter().enumerate() {
            if a != b {
                reduced[a][b] = scores[u][w];
            }
        }
        let (mut best_in, mut arg_in) = (f64::NEG_INFINITY, cycle[0]);
        let (mut best_out, mut arg_out) = (f64::NEG_INFINITY, cycle[0]);
        for &v in &cycle {
            let gain = scores[u][v] - scores[head[v]][v];
            if gain > best_in {
                best_in = gain;
                arg_in = v;
            }
            if scores[v][u] > best_out {
                best_out = scores[v][u];
                arg_out = v;
            }
        }
        reduced[a][c] = best_in;
        enter[a] = arg_in;
        reduced[c][a] = best_out;
        exit[a] = arg_out;
    }

    let sub = arborescence(&reduced);
    let mut result = head.clone();
    for (b, &w) in outside.iter().enumerate().skip(1) {
        let h = sub[b - 1];
        result[w] = if h == c { exit[b] } else { outside[h] };
    }
    let h = sub[c - 1];
    result[enter[h]] = outside[h];
    result[1..].to_vec()
}

fn find_cycle(head: &[usize]) -> Option<Vec<usize>> {
    let size = head.len();
    let mut state = vec![0u8; size];
    state[0] = 2;
    for start in 1..size {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = head[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}
