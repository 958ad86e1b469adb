use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser as ClapParser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arcforge::checkpoint;
use arcforge::config::RunConfig;
use arcforge::conllu::{is_tree, parse_conllu, parse_conllu_unannotated, write_conllu, Sentence, Token};
use arcforge::decode::Decoder;
use arcforge::exec::{exec_for, init_threads_from_env, Exec};
use arcforge::model::{ModelConfig, Parser};
use arcforge::train::{param_count, predict_corpus, train, uas_las, PunctPolicy};
use arcforge::vocab::Vocab;

/// Largest relative error accepted by `gradcheck`.
const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(ClapParser)]
#[command(name = "arcforge", version, about = "Graph-based dependency parser with arc vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save the checkpoint with the best dev LAS.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the `seed` key of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict heads and labels for a CoNLL-U file.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "mst")]
        decoder: Decoder,
        #[arg(long)]
        output: PathBuf,
    },
    /// Attachment scores of predictions against gold trees.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "keep")]
        punct: PunctPolicy,
    },
    /// Compare the closed-form parameter count with the built model.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of the full loss on a random 4-token sentence.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<bool> {
    let exec = exec_for(init_threads_from_env()?);
    match command {
        Command::Train { config, seed } => cmd_train(&config, seed, exec),
        Command::Parse {
            model,
            input,
            decoder,
            output,
        } => cmd_parse(&model, &input, decoder, &output, exec),
        Command::Eval { gold, pred, punct } => cmd_eval(&gold, &pred, punct),
        Command::Params { config } => cmd_params(&config),
        Command::Gradcheck { config, seed } => cmd_gradcheck(&config, seed),
    }
}

fn read_treebank(path: &Path) -> Result<Vec<Sentence>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_conllu(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_train(config_path: &Path, seed: Option<u64>, exec: Exec) -> Result<bool> {
    let mut cfg = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let train_set = read_treebank(cfg.require(&cfg.train_path, "train_path")?)?;
    let dev = read_treebank(cfg.require(&cfg.dev_path, "dev_path")?)?;
    let model_path = cfg.require(&cfg.model_path, "model_path")?.to_path_buf();
    let metrics_path = cfg
        .metrics_path
        .clone()
        .unwrap_or_else(|| model_path.with_extension("metrics.jsonl"));

    let vocab = Vocab::build(&train_set, cfg.min_count)?;
    let parser = Parser::new(cfg.model(), vocab, cfg.seed)?;
    let mut log = BufWriter::new(File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?);
    let mut write_err = None;
    let outcome = train(parser, &train_set, &dev, &cfg.train(), exec, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev UAS {:.2}  LAS {:.2}",
            r.epoch, r.train_loss, r.dev_uas, r.dev_las
        );
        let line = serde_json::json!({
            "epoch": r.epoch,
            "train_loss": r.train_loss,
            "dev_uas": r.dev_uas,
            "dev_las": r.dev_las,
            "filter_oracle": r.filter_oracle,
        });
        match writeln!(log, "{line}").and_then(|_| log.flush()) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                write_err = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics log");
    }
    checkpoint::save(&outcome.best, &model_path)?;
    let best = &outcome.reports[outcome.best_epoch - 1];
    println!(
        "best epoch {} dev UAS {:.2} LAS {:.2}; saved {}",
        outcome.best_epoch,
        best.dev_uas,
        best.dev_las,
        model_path.display()
    );
    Ok(true)
}

fn cmd_parse(model: &Path, input: &Path, decoder: Decoder, output: &Path, exec: Exec) -> Result<bool> {
    let parser = checkpoint::load(model).with_context(|| format!("loading {}", model.display()))?;
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let sentences = parse_conllu_unannotated(&text).with_context(|| format!("parsing {}", input.display()))?;
    let ev = predict_corpus(&parser, &sentences, decoder, exec)?;
    std::fs::write(output, write_conllu(&ev.predicted)).with_context(|| format!("writing {}", output.display()))?;
    Ok(true)
}

fn cmd_eval(gold: &Path, pred: &Path, punct: PunctPolicy) -> Result<bool> {
    let gold = read_treebank(gold)?;
    let pred = read_treebank(pred)?;
    let a = uas_las(&pred, &gold, punct)?;
    println!("UAS: {:.2}", a.uas);
    println!("LAS: {:.2}", a.las);
    Ok(true)
}

fn cmd_params(config_path: &Path) -> Result<bool> {
    let cfg = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let train_set = read_treebank(cfg.require(&cfg.train_path, "train_path")?)?;
    let vocab = Vocab::build(&train_set, cfg.min_count)?;
    let labels = vocab.num_labels();
    let configured = Parser::new(cfg.model(), vocab.clone(), cfg.seed)?;
    let exact = Parser::new(
        ModelConfig {
            exact_count: true,
            ..cfg.model()
        },
        vocab,
        cfg.seed,
    )?;
    let formula = param_count(&exact.config, labels)?;
    let registry = exact.store.formula_tally();
    println!("labels: {labels}");
    println!("formula: {formula}");
    println!("registry: {registry}");
    println!("total parameters (as configured): {}", configured.store.numel());
    if formula == registry {
        println!("OK");
        Ok(true)
    } else {
        println!("MISMATCH");
        Ok(false)
    }
}

/// Random 4-token sentence with a single-root tree over three labels.
fn random_sentence(rng: &mut impl Rng) -> Sentence {
    const FORMS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eta", "theta"];
    const UPOS: [&str; 3] = ["NOUN", "VERB", "ADJ"];
    const LABELS: [&str; 3] = ["a", "b", "c"];
    let n = 4;
    let heads = loop {
        let heads: Vec<usize> = (1..=n).map(|j| loop {
            let h = rng.gen_range(0..=n);
            if h != j {
                break h;
            }
        }).collect();
        if is_tree(&heads) && heads.iter().filter(|&&h| h == 0).count() == 1 {
            break heads;
        }
    };
    Sentence::new(
        heads
            .iter()
            .map(|&h| {
                let label = if h == 0 { "root" } else { LABELS[rng.gen_range(0..LABELS.len())] };
                Token::new(FORMS[rng.gen_range(0..FORMS.len())], UPOS[rng.gen_range(0..UPOS.len())], h, label)
            })
            .collect(),
    )
}

fn cmd_gradcheck(config_path: &Path, seed: u64) -> Result<bool> {
    let cfg = RunConfig::load(config_path).with_context(|| format!("loading {}", config_path.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentence = random_sentence(&mut rng);
    let vocab = Vocab::build(std::slice::from_ref(&sentence), 1)?;
    // finite differences need a deterministic loss
    let model = ModelConfig {
        dropout: 0.0,
        embed_dropout: 0.0,
        train_noise: false,
        ..cfg.model()
    };
    let parser = Parser::new(model, vocab, seed)?;
    let encoded = parser.encode(&sentence);
    let report = parser.grad_check(&encoded, 1e-5, 2000, seed)?;
    println!("coordinates: {}", report.coordinates);
    println!("max_rel_error: {:.3e}", report.max_rel_error);
    if report.max_rel_error < GRADCHECK_TOLERANCE {
        println!("OK");
        Ok(true)
    } else {
        if let Some((Some(id), i)) = report.worst {
            println!("worst: {}[{i}]", parser.store.get(id).name);
        }
        println!("FAIL (tolerance {GRADCHECK_TOLERANCE:e})");
        Ok(false)
    }
}
