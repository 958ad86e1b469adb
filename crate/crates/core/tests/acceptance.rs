//! Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::ops::ControlFlow;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arcforge::conllu::{parse_conllu, Sentence, Token};
use arcforge::decode::{brute_force_best_tree, cle, eisner, ScoreMatrix};
use arcforge::exec::Exec;
use arcforge::model::{ArcVectorSet, ModelConfig, ModelKind, Parser, Refiner};
use arcforge::params::ParamStore;
use arcforge::synthetic;
use arcforge::tensor::{grad_check, Graph, Mode, Tensor, Var};
use arcforge::train::{filter_oracle_uas, param_count, predict_corpus, train, uas_las, EpochReport, PunctPolicy, TrainConfig};
use arcforge::vocab::Vocab;

const FIXTURE: &str = include_str!("fixtures/tiny.conllu");
const FIXTURE_PRED: &str = include_str!("fixtures/tiny_pred.conllu");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

// 1 ------------------------------------------------------------------------

fn decoder_exactness() -> Outcome {
    const TOL: f64 = 1e-9;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0;
    for n in 2..=5 {
        for _ in 0..200 {
            let rows: Vec<Vec<f64>> = (0..=n).map(|_| (0..=n).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
            let s = ScoreMatrix::from_rows(&rows).map_err(err)?;
            let (_, proj) = brute_force_best_tree(&s, true).map_err(err)?;
            let (_, free) = brute_force_best_tree(&s, false).map_err(err)?;
            let e = s.tree_score(&eisner(&s));
            let c = s.tree_score(&cle(&s));
            ensure((e - proj).abs() <= TOL, || format!("n={n}: eisner {e} vs brute force {proj}"))?;
            ensure((c - free).abs() <= TOL, || format!("n={n}: cle {c} vs brute force {free}"))?;
            cases += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(30), || format!("took {t:?}"))?;
    Ok(format!("{cases} matrices, tol {TOL:e}, {:.2}s", t.as_secs_f64()))
}

// 2 ------------------------------------------------------------------------

type OpFn = fn(&mut Graph, &[Var]) -> Var;
type ShapeFn = fn(usize, usize) -> Vec<Vec<usize>>;

/// Inputs of each op for a random size `a` and `b` in 1..=4.
fn op_cases() -> Vec<(&'static str, ShapeFn, OpFn)> {
    vec![
        ("add", |a, b| vec![vec![a, b], vec![a, b]], |g, v| g.add(v[0], v[1]).unwrap()),
        ("sub", |a, b| vec![vec![a, b], vec![a, b]], |g, v| g.sub(v[0], v[1]).unwrap()),
        ("mul", |a, b| vec![vec![a, b], vec![a, b]], |g, v| g.mul(v[0], v[1]).unwrap()),
        ("add_row", |a, b| vec![vec![a, b], vec![b]], |g, v| g.add_row(v[0], v[1]).unwrap()),
        ("scale", |a, b| vec![vec![a, b]], |g, v| g.scale(v[0], 0.7)),
        ("relu", |a, b| vec![vec![a, b]], |g, v| g.relu(v[0])),
        ("gelu", |a, b| vec![vec![a, b]], |g, v| g.gelu(v[0])),
        ("sum", |a, b| vec![vec![a, b]], |g, v| g.sum(v[0])),
        ("mean", |a, b| vec![vec![a, b]], |g, v| g.mean(v[0])),
        ("matmul", |a, b| vec![vec![a, b], vec![b, a + 1]], |g, v| g.matmul(v[0], v[1]).unwrap()),
        ("transpose", |a, b| vec![vec![a, b]], |g, v| g.transpose(v[0]).unwrap()),
        ("reshape", |a, b| vec![vec![a, b]], |g, v| {
            let n = g.value(v[0]).numel();
            g.reshape(v[0], &[n]).unwrap()
        }),
        ("softmax", |a, b| vec![vec![a, b + 1]], |g, v| g.softmax(v[0]).unwrap()),
        ("layer_norm", |a, b| vec![vec![a, b + 1], vec![b + 1], vec![b + 1]], |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap()),
        ("gather_rows", |_, b| vec![vec![4, b]], |g, v| g.gather_rows(v[0], &[3, 0, 3, 1]).unwrap()),
        ("embedding_gather", |_, b| vec![vec![4, b]], |g, v| g.embedding_gather(v[0], &[2, 2, 0]).unwrap()),
        ("replace_rows", |_, b| vec![vec![4, b], vec![2, b]], |g, v| g.replace_rows(v[0], &[2, 0], v[1]).unwrap()),
        ("concat_cols", |a, b| vec![vec![a, b], vec![a, 2]], |g, v| g.concat_cols(&[v[0], v[1]]).unwrap()),
        ("slice_cols", |a, _| vec![vec![a, 5]], |g, v| g.slice_cols(v[0], 1, 3).unwrap()),
        ("masked_fill", |_, _| vec![vec![2, 3]], |g, v| g.masked_fill(v[0], &[true, false, false, false, true, false], 5.0).unwrap()),
        ("pairwise_bilinear", |a, b| vec![vec![a, b], vec![b, 2, a], vec![b + 1, a]], |g, v| g.pairwise_bilinear(v[0], v[1], v[2]).unwrap()),
        ("row_bilinear", |a, b| vec![vec![a, b], vec![b, 3, b], vec![a, b]], |g, v| g.row_bilinear(v[0], v[1], v[2]).unwrap()),
        ("bilinear", |a, b| vec![vec![a], vec![a, 2, b], vec![b]], |g, v| g.bilinear(v[0], v[1], v[2]).unwrap()),
        ("grouped_weighted_sum", |a, b| vec![vec![a, b], vec![a * b, 3]], |g, v| g.grouped_weighted_sum(v[0], v[1]).unwrap()),
        ("cross_entropy", |a, b| vec![vec![a, b + 1]], |g, v| {
            let targets: Vec<usize> = (0..g.shape(v[0])[0]).map(|i| i % 2).collect();
            g.cross_entropy(v[0], &targets).unwrap()
        }),
    ]
}

fn op_gradients() -> Result<(usize, f64), String> {
    const TOL: f64 = 1e-6;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (name, shapes, f) in op_cases() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let inputs: Vec<Tensor> = shapes(a, b).iter().map(|s| random_tensor(&mut rng, s)).collect();
            for which in 0..inputs.len() {
                let report = grad_check(
                    |g, x| {
                        let vars: Vec<Var> = inputs
                            .iter()
                            .enumerate()
                            .map(|(i, t)| if i == which { x } else { g.constant(t.clone()) })
                            .collect();
                        let out = f(g, &vars);
                        let shape = g.shape(out).to_vec();
                        let n = g.value(out).numel();
                        let w = Tensor::new(shape, (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect())?;
                        let w = g.constant(w);
                        let p = g.mul(out, w)?;
                        Ok(g.sum(p))
                    },
                    &inputs[which],
                    1e-5,
                )
                .map_err(err)?;
                ensure(report.max_rel_error < TOL, || {
                    format!("{name} seed {seed} input {which}: {:.3e}", report.max_rel_error)
                })?;
                worst = worst.max(report.max_rel_error);
                checks += 1;
            }
        }
    }
    Ok((checks, worst))
}

fn four_token_sentence() -> Sentence {
    Sentence::new(vec![
        Token::new("the", "DET", 2, "det"),
        Token::new("cat", "NOUN", 3, "nsubj"),
        Token::new("sees", "VERB", 0, "root"),
        Token::new("birds", "NOUN", 3, "obj"),
    ])
}

/// Smallest gap between the k-th and (k+1)-th filter logit of any modifier.
fn selection_margin(parser: &Parser, sent: &Sentence) -> Result<f64, String> {
    let enc = parser.encode(sent);
    let mut g = Graph::new(Mode::Train, 0);
    let fwd = parser.forward(&mut g, &parser.store, &enc, None).map_err(err)?;
    let f = fwd.filter.ok_or("model has no filter")?;
    let logits = g.value(f.logits);
    let k = parser.config.k;
    let mut margin = f64::INFINITY;
    for j in 1..=enc.len() {
        let mut row: Vec<f64> = logits.row(j - 1).iter().enumerate().filter(|&(h, _)| h != j).map(|(_, &v)| v).collect();
        row.sort_by(|a, b| b.total_cmp(a));
        if k < row.len() {
            margin = margin.min(row[k - 1] - row[k]);
        }
    }
    Ok(margin)
}

fn gradient_fidelity() -> Outcome {
    const TOL: f64 = 1e-5;
    let start = Instant::now();
    let (checks, op_worst) = op_gradients()?;

    let sent = four_token_sentence();
    let vocab = Vocab::build(std::slice::from_ref(&sent), 1).map_err(err)?;
    let config = ModelConfig {
        kind: ModelKind::ArcLoc,
        emb_dim: 8,
        context_layers: 1,
        mlp_dim: 6,
        arc_size: 4,
        transformer_layers: 1,
        k: 2,
        train_noise: false,
        dropout: 0.0,
        embed_dropout: 0.0,
        ..ModelConfig::default()
    };
    // first seed whose selection cannot flip under the probe step
    let (seed, parser, margin) = (0..20u64)
        .map(|seed| {
            let p = Parser::new(config.clone(), vocab.clone(), seed).unwrap();
            let m = selection_margin(&p, &sent).unwrap();
            (seed, p, m)
        })
        .find(|(_, _, m)| *m > 1e-3)
        .ok_or("no sort-stable parameter point in 20 seeds")?;
    let report = parser.grad_check(&parser.encode(&sent), 1e-5, usize::MAX, seed).map_err(err)?;
    let t = start.elapsed();
    ensure(report.max_rel_error < TOL, || format!("end-to-end max rel error {:.3e}", report.max_rel_error))?;
    ensure(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!(
        "{checks} op checks max {op_worst:.1e} (<1e-6); ArcLoc P=1 k=2: {} coords max {:.1e} (<{TOL:e}), margin {margin:.2e}, {:.2}s",
        report.coordinates,
        report.max_rel_error,
        t.as_secs_f64()
    ))
}

// 3 ------------------------------------------------------------------------

fn straight_through() -> Outcome {
    const TOL: f64 = 1e-6;
    let (n, r, k) = (4, 3, 2);
    let size = n + 1;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rf = Refiner::new(&mut store, r, 0, k, 1.0, false, true, &mut rng);
    let vt = random_tensor(&mut rng, &[size * size, r]);
    let lt = random_tensor(&mut rng, &[size * size, 1]);
    let wt = random_tensor(&mut rng, &[n * k, r]);

    let mut g = Graph::new(Mode::Eval, 0);
    let v = g.leaf(vt.clone());
    let l = g.leaf(lt.clone());
    let v0 = ArcVectorSet { vectors: v, n };
    let f = rf.filter(&mut g, &v0, l, None).map_err(err)?;
    for (t, &row) in f.kept_rows.iter().enumerate() {
        let got = g.value(f.kept_vectors).row(t);
        let want = vt.row(row);
        ensure(got.iter().zip(want).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("kept row {t} differs from v0 row {row}")
        })?;
    }
    let w = g.constant(wt.clone());
    let prod = g.mul(f.kept_vectors, w).map_err(err)?;
    let loss = g.sum(prod);
    g.backward(loss).map_err(err)?;
    let gv = g.grad(v).ok_or("no gradient for v0")?.to_vec();
    let gl = g.grad(l).ok_or("no gradient for logits")?.to_vec();

    // loss = Σ_t w_t·E_j(t), E_j = Σ_h p_hj v_hj, p_·j = softmax over h ≠ j
    let mut want_v = vec![0.0; size * size * r];
    let mut want_l = vec![0.0; size * size];
    for j in 1..=n {
        let heads: Vec<usize> = (0..size).filter(|&h| h != j).collect();
        let z: f64 = heads.iter().map(|&h| lt.data()[h * size + j].exp()).sum();
        let p: Vec<f64> = heads.iter().map(|&h| lt.data()[h * size + j].exp() / z).collect();
        let mut wsum = vec![0.0; r];
        for (t, &row) in f.kept_rows.iter().enumerate() {
            if row % size == j {
                for (acc, w) in wsum.iter_mut().zip(wt.row(t)) {
                    *acc += w;
                }
            }
        }
        let e: Vec<f64> = (0..r).map(|c| heads.iter().zip(&p).map(|(&h, pi)| pi * vt.row(h * size + j)[c]).sum()).collect();
        for (&h, &ph) in heads.iter().zip(&p) {
            let row = h * size + j;
            for c in 0..r {
                want_v[row * r + c] = ph * wsum[c];
                want_l[row] += wsum[c] * ph * (vt.row(row)[c] - e[c]);
            }
        }
    }
    let dv = gv.iter().zip(&want_v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dl = gl.iter().zip(&want_l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(dv < TOL && dl < TOL, || format!("Jacobian mismatch: v {dv:.2e}, logits {dl:.2e}"))?;
    Ok(format!("forward bitwise; backward |Δ| v {dv:.1e}, logits {dl:.1e} (<{TOL:e})"))
}

// 4 ------------------------------------------------------------------------

fn parameter_accounting() -> Outcome {
    let treebank = parse_conllu(FIXTURE).map_err(err)?;
    let vocab = Vocab::build(&treebank, 1).map_err(err)?;
    let labels = vocab.num_labels();
    let base = ModelConfig {
        exact_count: true,
        ..ModelConfig::default()
    };
    let configs = [
        ModelConfig { kind: ModelKind::Loc, emb_dim: 1024, context_layers: 0, arc_mlp: 900, label_mlp: 150, ..base.clone() },
        ModelConfig { kind: ModelKind::Loc, emb_dim: 32, context_layers: 1, arc_mlp: 24, label_mlp: 10, ..base.clone() },
        ModelConfig { kind: ModelKind::ArcLoc, emb_dim: 1024, context_layers: 0, mlp_dim: 2, arc_size: 2, transformer_layers: 0, ..base.clone() },
        ModelConfig { kind: ModelKind::ArcLoc, emb_dim: 32, context_layers: 1, mlp_dim: 16, arc_size: 16, transformer_layers: 0, ..base.clone() },
        ModelConfig { kind: ModelKind::ArcLoc, emb_dim: 32, context_layers: 1, mlp_dim: 16, arc_size: 16, transformer_layers: 1, ..base.clone() },
        ModelConfig { kind: ModelKind::ArcLoc, emb_dim: 32, context_layers: 1, mlp_dim: 16, arc_size: 16, transformer_layers: 2, ..base.clone() },
        ModelConfig { kind: ModelKind::ArcLoc, emb_dim: 48, context_layers: 0, mlp_dim: 20, arc_size: 32, transformer_layers: 2, use_upos: false, ..base },
    ];
    let mut tallies = Vec::new();
    for c in &configs {
        let p = Parser::new(c.clone(), vocab.clone(), 0).map_err(err)?;
        let formula = param_count(c, labels).map_err(err)?;
        let registry = p.store.formula_tally();
        ensure(formula == registry, || format!("{:?} P={}: formula {formula} registry {registry}", c.kind, c.transformer_layers))?;
        tallies.push(registry);
    }
    let r = 16;
    for (lo, hi) in [(3, 4), (4, 5)] {
        let delta = tallies[hi] - tallies[lo];
        ensure(delta == 9 * r * r, || format!("layer delta {delta} != 9r² = {}", 9 * r * r))?;
    }
    Ok(format!(
        "{} configs equal (Loc x=900 y=150 L={labels}: {}); layer delta {} = 9r²",
        configs.len(),
        tallies[0],
        tallies[4] - tallies[3]
    ))
}

// 5 ------------------------------------------------------------------------

fn attention_complexity() -> Outcome {
    let (r, k) = (16, 10);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rf = Refiner::new(&mut store, r, 1, k, 1.0, false, true, &mut rng);
    let mut entries = Vec::new();
    for n in [20usize, 50] {
        let size = n + 1;
        let mut g = Graph::eval();
        let v0 = ArcVectorSet {
            vectors: g.constant(random_tensor(&mut rng, &[size * size, r])),
            n,
        };
        let raw = g.constant(random_tensor(&mut rng, &[size * size, 1]));
        let f = rf.filter(&mut g, &v0, raw, None).map_err(err)?;
        rf.refine(&mut g, &store, &v0, &f).map_err(err)?;
        entries.push(g.stats().max_attention_entries);
    }
    ensure(entries[1] == (50 * k) * (50 * k), || format!("n=50 stores {} entries", entries[1]))?;
    let ratio = entries[1] as f64 / entries[0] as f64;
    let quadratic = (50.0f64 / 20.0).powi(2);
    ensure((ratio / quadratic - 1.0).abs() <= 0.1, || format!("growth ratio {ratio:.3}, expected {quadratic:.3}"))?;
    Ok(format!("n=20: {}, n=50: {} entries; ratio {ratio:.3} vs {quadratic:.3} (quartic {:.1})", entries[0], entries[1], quadratic * quadratic))
}

// 6 ------------------------------------------------------------------------

fn filter_oracle() -> Outcome {
    let sentences = synthetic::corpus(12, 9);
    let vocab = Vocab::build(&sentences, 1).map_err(err)?;
    let longest = sentences.iter().map(Sentence::len).max().unwrap_or(0);
    let config = ModelConfig {
        emb_dim: 16,
        context_layers: 1,
        mlp_dim: 8,
        arc_size: 8,
        transformer_layers: 1,
        k: longest,
        ..ModelConfig::default()
    };
    let parser = Parser::new(config, vocab, 4).map_err(err)?;
    let ev = predict_corpus(&parser, &sentences, arcforge::decode::Decoder::Mst, Exec::Sequential).map_err(err)?;
    let full = filter_oracle_uas(ev.kept.as_ref().ok_or("no filter output")?, &sentences).map_err(err)?;
    ensure(full == 100.0, || format!("k >= n oracle {full:.2}"))?;

    // Hand-set logits on "the dog barks ." (gold heads 2 3 0 3), k = 2:
    //   token 1 keeps {3, 4}  gold 2 lost
    //   token 2 keeps {3, 0}  gold 3 kept
    //   token 3 keeps {1, 2}  gold 0 lost
    //   token 4 keeps {3, 1}  gold 3 kept
    // so 2 of 4 gold heads survive.
    let gold = parse_conllu(FIXTURE).map_err(err)?;
    let sent = &gold[0];
    let n = sent.len();
    let size = n + 1;
    let prefs: [&[usize]; 4] = [&[3, 4], &[3, 0], &[1, 2], &[3, 1]];
    let mut raw = vec![0.0; size * size];
    for (jm1, heads) in prefs.iter().enumerate() {
        for (rank, &h) in heads.iter().enumerate() {
            raw[h * size + jm1 + 1] = 5.0 - rank as f64;
        }
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rf = Refiner::new(&mut store, 2, 0, 2, 1.0, false, true, &mut rng);
    let mut g = Graph::eval();
    let v0 = ArcVectorSet {
        vectors: g.constant(Tensor::zeros(&[size * size, 2])),
        n,
    };
    let raw = g.constant(Tensor::new(vec![size * size, 1], raw).map_err(err)?);
    let f = rf.filter(&mut g, &v0, raw, None).map_err(err)?;
    let adversarial = filter_oracle_uas(&[f.kept], std::slice::from_ref(sent)).map_err(err)?;
    ensure(adversarial == 50.0, || format!("adversarial fixture {adversarial:.2}, hand count 50.00"))?;
    Ok(format!("k>=n: {full:.2}; adversarial: {adversarial:.2} (hand count 50.00)"))
}

// 7, 10 --------------------------------------------------------------------

struct ToyRun {
    reports: Vec<EpochReport>,
    held_uas: f64,
    held_las: f64,
    seconds: f64,
}

fn toy_config(layers: usize) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        kind: ModelKind::ArcLoc,
        emb_dim: 32,
        context_layers: 2,
        mlp_dim: 32,
        arc_size: 32,
        transformer_layers: layers,
        k: 10,
        dropout: 0.1,
        embed_dropout: 0.2,
        filter_aux_loss: layers > 0,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 200,
        batch_tokens: 32,
        lr_main: Some(2e-3),
        lr_transformer: Some(2e-3),
        warmup_epochs_main: 1.0,
        warmup_epochs_transformer: 1.0,
        swa_start_epoch: 201,
        seed: 0,
        ..TrainConfig::default()
    };
    (model, train)
}

/// Trains on the 32-sentence toy corpus, using it as the dev set, until
/// train UAS and LAS both reach 100.
fn toy_run(layers: usize, exec: Exec) -> Result<ToyRun, String> {
    let train_set = synthetic::corpus(32, 1);
    let held_out = synthetic::corpus(16, 2);
    let vocab = Vocab::build(&train_set, 1).map_err(err)?;
    let (model, tc) = toy_config(layers);
    let start = Instant::now();
    let parser = Parser::new(model, vocab, tc.seed).map_err(err)?;
    let out = train(parser, &train_set, &train_set, &tc, exec, |r| {
        if r.dev_uas >= 100.0 && r.dev_las >= 100.0 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .map_err(err)?;
    let ev = predict_corpus(&out.best, &held_out, tc.decoder, exec).map_err(err)?;
    let a = uas_las(&ev.predicted, &held_out, PunctPolicy::Keep).map_err(err)?;
    Ok(ToyRun {
        reports: out.reports,
        held_uas: a.uas,
        held_las: a.las,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn toy_learning(runs: &[ToyRun; 2]) -> Outcome {
    let mut parts = Vec::new();
    let mut total = 0.0;
    for (layers, run) in runs.iter().enumerate() {
        let reached = run.reports.iter().find(|r| r.dev_uas >= 99.0).map(|r| r.epoch);
        let epoch = reached.ok_or_else(|| {
            let best = run.reports.iter().map(|r| r.dev_uas).fold(0.0, f64::max);
            format!("P={layers}: train UAS peaked at {best:.2} in {} epochs", run.reports.len())
        })?;
        ensure(run.held_uas >= 90.0, || format!("P={layers}: held-out UAS {:.2}", run.held_uas))?;
        parts.push(format!(
            "P={layers}: train UAS>=99 at epoch {epoch}, held-out UAS {:.2} LAS {:.2}",
            run.held_uas, run.held_las
        ));
        total += run.seconds;
    }
    ensure(total < 300.0, || format!("took {total:.0}s"))?;
    Ok(format!("{}; {total:.1}s", parts.join("; ")))
}

fn determinism(first: &ToyRun) -> Outcome {
    let second = toy_run(1, Exec::Sequential)?;
    let bits = |rs: &[EpochReport]| rs.iter().map(|r| r.dev_las.to_bits()).collect::<Vec<_>>();
    ensure(bits(&first.reports) == bits(&second.reports), || {
        format!("dev LAS sequences differ ({} vs {} epochs)", first.reports.len(), second.reports.len())
    })?;
    let mut detail = format!("{} epochs, identical dev LAS bits", first.reports.len());
    if cfg!(feature = "parallel") {
        let par = toy_run(1, Exec::Parallel)?;
        ensure(bits(&first.reports) == bits(&par.reports), || "parallel run differs from sequential".into())?;
        detail.push_str("; parallel run identical");
    }
    Ok(detail)
}

// 8 ------------------------------------------------------------------------

fn evaluation_protocol() -> Outcome {
    const TOL: f64 = 0.01;
    let gold = parse_conllu(FIXTURE).map_err(err)?;
    let gold = &gold[..2];
    let pred = parse_conllu(FIXTURE_PRED).map_err(err)?;
    // 7 tokens; heads wrong: "." and "sir"; label wrong: "dog".
    // upos drops both PUNCT tokens; pos-set drops "." only (the comma has
    // no fine tag and its UPOS is not a treebank punctuation tag).
    let expected = [
        (PunctPolicy::Keep, 500.0 / 7.0, 400.0 / 7.0),
        (PunctPolicy::Upos, 80.0, 60.0),
        (PunctPolicy::PosSet, 500.0 / 6.0, 400.0 / 6.0),
    ];
    let mut parts = Vec::new();
    for (policy, uas, las) in expected {
        let a = uas_las(&pred, gold, policy).map_err(err)?;
        ensure((a.uas - uas).abs() < TOL && (a.las - las).abs() < TOL, || {
            format!("{policy}: got {:.2}/{:.2}, hand count {uas:.2}/{las:.2}", a.uas, a.las)
        })?;
        parts.push(format!("{policy} {:.2}/{:.2}", a.uas, a.las));
    }
    Ok(parts.join(", "))
}

// 9 ------------------------------------------------------------------------

fn swa() -> Outcome {
    const TOL: f64 = 1e-12;
    // averaging starts after 4 epochs
    let swa_start = 5;
    let last_epoch = 8;
    let corpus = synthetic::corpus(8, 3);
    let vocab = Vocab::build(&corpus, 1).map_err(err)?;
    let model = ModelConfig {
        emb_dim: 16,
        context_layers: 1,
        mlp_dim: 8,
        arc_size: 8,
        transformer_layers: 1,
        k: 3,
        ..ModelConfig::default()
    };
    let run = |epochs: usize| {
        let tc = TrainConfig {
            epochs,
            batch_tokens: 40,
            swa_start_epoch: swa_start,
            seed: 11,
            ..TrainConfig::default()
        };
        let parser = Parser::new(model.clone(), vocab.clone(), 3).unwrap();
        train(parser, &corpus, &corpus, &tc, Exec::Sequential, |_| ControlFlow::Continue(())).map_err(err)
    };
    let full = run(last_epoch)?;
    let snapshots: Vec<Vec<f64>> = (swa_start..=last_epoch)
        .map(|e| run(e).map(|o| o.last.flat()))
        .collect::<Result<_, _>>()?;
    ensure(full.last.flat() == snapshots[snapshots.len() - 1], || "truncated run diverged".into())?;
    let m = snapshots.len() as f64;
    let averaged = full.swa.averaged().map_err(err)?;
    let mut worst: f64 = 0.0;
    for (i, &a) in averaged.iter().enumerate() {
        let mean = snapshots.iter().map(|s| s[i]).sum::<f64>() / m;
        worst = worst.max((a - mean).abs());
    }
    ensure(worst <= TOL, || format!("max |avg - mean| {worst:.2e}"))?;
    ensure(full.swa.count() == snapshots.len(), || format!("{} snapshots averaged", full.swa.count()))?;
    let flags: Vec<bool> = full.reports.iter().map(|r| r.averaged).collect();
    ensure(flags.iter().take(swa_start - 1).all(|&f| !f) && flags[swa_start - 1..].iter().all(|&f| f), || {
        format!("averaged flags {flags:?}")
    })?;
    Ok(format!("epochs {swa_start}..={last_epoch} averaged, max |Δ| {worst:.1e} (<={TOL:e})"))
}

// --------------------------------------------------------------------------

fn run_check(id: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match result {
        Ok(detail) => {
            println!("PASS {id:>2} {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {id:>2} {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run_check(1, "decoder exactness", decoder_exactness);
    ok &= run_check(2, "gradient fidelity", gradient_fidelity);
    ok &= run_check(3, "straight-through contract", straight_through);
    ok &= run_check(4, "parameter accounting", parameter_accounting);
    ok &= run_check(5, "attention complexity", attention_complexity);
    ok &= run_check(6, "filter oracle", filter_oracle);

    let toy = panic::catch_unwind(|| -> Result<[ToyRun; 2], String> {
        Ok([toy_run(0, Exec::Sequential)?, toy_run(1, Exec::Sequential)?])
    });
    let toy = match toy {
        Ok(r) => r,
        Err(_) => Err("panicked".to_string()),
    };
    ok &= run_check(7, "toy-corpus learning", || toy_learning(toy.as_ref().map_err(Clone::clone)?));
    ok &= run_check(8, "evaluation protocol", evaluation_protocol);
    ok &= run_check(9, "stochastic weight averaging", swa);
    ok &= run_check(10, "determinism", || determinism(&toy.as_ref().map_err(Clone::clone)?[1]));

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
