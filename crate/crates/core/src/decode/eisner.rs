use super::ScoreMatrix;

const LEFT: usize = 0;
const RIGHT: usize = 1;

struct Chart {
    m: usize,
    score: Vec<f64>,
    split: Vec<usize>,
}

impl Chart {
    fn new(m: usize) -> Self {
        Chart {
            m,
            score: vec![f64::NEG_INFINITY; m * m * 2],
            split: vec![0; m * m * 2],
        }
    }

    fn at(&self, s: usize, t: usize, d: usize) -> usize {
        (s * self.m + t) * 2 + d
    }
}

/// Best projective tree with exactly one token attached to the root.
///
/// The chart runs over the tokens only; the root child `r` is chosen last
/// by combining the complete spans `[1, r]` (headed right) and `[r, n]`
/// (headed left). Returns `heads[j-1]` for `j = 1..=n`.
pub fn eisner(s: &ScoreMatrix) -> Vec<usize> {
    let m = s.len();
    if m == 0 {
        return Vec::new();
    }
    // position p in the chart is token p + 1
    let arc = |h: usize, d: usize| s.get(h + 1, d + 1);
    let mut complete = Chart::new(m);
    let mut incomplete = Chart::new(m);
    for p in 0..m {
        for d in [LEFT, RIGHT] {
            let i = complete.at(p, p, d);
            complete.score[i] = 0.0;
        }
    }
    for len in 1..m {
        for s0 in 0..m - len {
            let t = s0 + len;
            let (mut best, mut arg) = (f64::NEG_INFINITY, s0);
            for r in s0..t {
                let v = complete.score[complete.at(s0, r, RIGHT)] + complete.score[complete.at(r + 1, t, LEFT)];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            let il = incomplete.at(s0, t, LEFT);
            incomplete.score[il] = best + arc(t, s0);
            incomplete.split[il] = arg;
            let ir = incomplete.at(s0, t, RIGHT);
            incomplete.score[ir] = best + arc(s0, t);
            incomplete.split[ir] = arg;

            let (mut best, mut arg) = (f64::NEG_INFINITY, s0);
            for r in s0..t {
                let v = complete.score[complete.at(s0, r, LEFT)] + incomplete.score[incomplete.at(r, t, LEFT)];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            let cl = complete.at(s0, t, LEFT);
            complete.score[cl] = best;
            complete.split[cl] = arg;

            let (mut best, mut arg) = (f64::NEG_INFINITY, t);
            for r in s0 + 1..=t {
                let v = incomplete.score[incomplete.at(s0, r, RIGHT)] + complete.score[complete.at(r, t, RIGHT)];
                if v > best {
                    best = v;
                    arg = r;
                }
            }
            let cr = complete.at(s0, t, RIGHT);
            complete.score[cr] = best;
            complete.split[cr] = arg;
        }
    }

    let (mut best, mut root) = (f64::NEG_INFINITY, 0);
    for r in 0..m {
        let v = complete.score[complete.at(0, r, LEFT)] + complete.score[complete.at(r, m - 1, RIGHT)] + s.get(0, r + 1);
        if v > best {
            best = v;
            root = r;
        }
    }

    let mut heads = vec![0usize; m];
    heads[root] = 0;
    let mut stack = vec![(true, 0, root, LEFT), (true, root, m - 1, RIGHT)];
    while let Some((is_complete, s0, t, d)) = stack.pop() {
        if s0 == t {
            continue;
        }
        if is_complete {
            let r = complete.split[complete.at(s0, t, d)];
            if d == LEFT {
                stack.push((true, s0, r, LEFT));
                stack.push((false, r, t, LEFT));
            } else {
                stack.push((false, s0, r, RIGHT));
                stack.push((true, r, t, RIGHT));
            }
        } else {
            let r = incomplete.split[incomplete.at(s0, t, d)];
            if d == LEFT {
                heads[s0] = t + 1;
            } else {
                heads[t] = s0 + 1;
            }
            stack.push((true, s0, r, RIGHT));
            stack.push((true, r + 1, t, LEFT));
        }
    }
    heads
}
