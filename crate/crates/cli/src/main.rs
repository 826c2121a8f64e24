//! Command-line surface for the scope localization pipeline.
//!
//! Every command reads an optional flat key=value config file, then
//! `SCOPELOC_*` environment overrides, then `--seed`/`--out` flags, in that
//! order of increasing precedence. Any contract violation exits nonzero
//! with a one-line diagnostic on stderr.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use scopeloc_core::data::write_manifest;
use scopeloc_core::{
    boxes_to_token_labels, build_prior_lattice, decode, generate_corpus, gradient_check,
    iou_by_scope_length, load_corpus_dir, load_embeddings_path, read_predictions,
    scope_length_histogram, span_exact_prf, stratified_split, sweep_gamma, token_prf, train,
    write_predictions, AssertionClass, DecodeConfig, Document, EmbeddingTable, LabeledSpan,
    PredictionGrids, PredictionRecord, RunConfig, ScopeModel, SplitRatios, SynthConfig,
    GRADCHECK_EPS,
};

#[derive(Parser)]
#[command(
    name = "scopeloc",
    version,
    about = "Assertion-scope localization: generate, train, decode, score"
)]
struct Cli {
    /// Flat key=value config file; every key optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: text, gold annotations, embeddings.
    Synth,
    /// Split a corpus, train a model, write checkpoint and loss log.
    Train {
        /// Corpus directory of .txt/.ann pairs.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Embedding vector file.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Decode a checkpoint over a corpus into a predictions file.
    Predict {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score a predictions file against a gold corpus.
    Eval {
        /// Line-delimited JSON predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Audit analytic gradients of a small full model by central differences.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seq_len: usize,
        #[arg(long, default_value_t = 8)]
        embed_dim: usize,
        #[arg(long, default_value_t = 4)]
        priors: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        filters: usize,
        /// Maximum tolerated relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Sweep the decode threshold and tabulate (gamma, macro-F1).
    SweepGamma {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated thresholds; default 0.0 through 1.0 plus 1.01.
        #[arg(long)]
        gammas: Option<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let config = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&config),
        Command::Train { corpus, embeddings } => cmd_train(&config, corpus, embeddings),
        Command::Predict {
            corpus,
            embeddings,
            checkpoint,
        } => cmd_predict(&config, corpus, embeddings, checkpoint),
        Command::Eval {
            predictions,
            corpus,
        } => cmd_eval(&config, predictions, corpus),
        Command::Gradcheck {
            seq_len,
            embed_dim,
            priors,
            classes,
            filters,
            tolerance,
        } => cmd_gradcheck(
            &config, *seq_len, *embed_dim, *priors, *classes, *filters, *tolerance,
        ),
        Command::SweepGamma {
            corpus,
            embeddings,
            checkpoint,
            gammas,
        } => cmd_sweep_gamma(&config, corpus, embeddings, checkpoint, gammas.as_deref()),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let content = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_str(&content, &path.display().to_string())?
        }
        None => RunConfig::default(),
    };
    config.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

/// Resolve a required path: command flag first, then config key.
fn require_path(
    flag: &Option<PathBuf>,
    from_config: &Option<PathBuf>,
    flag_name: &str,
    key_name: &str,
) -> Result<PathBuf> {
    flag.clone().or_else(|| from_config.clone()).with_context(|| {
        format!("missing {key_name}: pass --{flag_name} or set the {key_name} config key")
    })
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config
        .output_dir
        .clone()
        .context("missing output_dir: pass --out or set the output_dir config key")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_corpus(dir: &Path) -> Result<Vec<Document>> {
    let docs =
        load_corpus_dir(dir).with_context(|| format!("loading corpus {}", dir.display()))?;
    if docs.is_empty() {
        bail!("corpus {} contains no .txt documents", dir.display());
    }
    Ok(docs)
}

fn load_vectors(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings_path(path).with_context(|| format!("loading embeddings {}", path.display()))
}

fn load_model(path: &Path, table: EmbeddingTable) -> Result<ScopeModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ScopeModel::load(BufReader::new(file), table)
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_synth(config: &RunConfig) -> Result<()> {
    let dir = out_dir(config)?;
    let corpus = generate_corpus(&SynthConfig {
        n_documents: config.synth_documents,
        seed: config.seed,
        embed_dim: config.embed_dim,
        max_scope_len: config.synth_max_scope_len,
        ..SynthConfig::default()
    });
    corpus
        .write_to_dir(&dir)
        .with_context(|| format!("writing corpus to {}", dir.display()))?;
    println!(
        "wrote {} documents and embeddings.vec to {}",
        corpus.documents.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train(
    config: &RunConfig,
    corpus: &Option<PathBuf>,
    embeddings: &Option<PathBuf>,
) -> Result<()> {
    let corpus_dir = require_path(corpus, &config.corpus_dir, "corpus", "corpus_dir")?;
    let embed_path = require_path(
        embeddings,
        &config.embeddings_file,
        "embeddings",
        "embeddings_file",
    )?;
    let dir = out_dir(config)?;

    let docs = load_corpus(&corpus_dir)?;
    let table = load_vectors(&embed_path)?;
    let ratios = SplitRatios::new(config.train_ratio, config.val_ratio, config.test_ratio)?;
    let split = stratified_split(docs, &ratios, config.seed)?;
    fs::write(dir.join("split.tsv"), write_manifest(&split))?;

    let mut model = ScopeModel::new(config.to_model_config(), table)?;
    let started = Instant::now();
    let outcome = train(&mut model, &split.train, &split.val, &config.to_train_options())?;

    let ckpt_path = dir.join("model.ckpt");
    let file = File::create(&ckpt_path)?;
    model.save(BufWriter::new(file))?;
    fs::write(
        dir.join("loss_log.tsv"),
        scopeloc_core::format_loss_log(&outcome.log),
    )?;

    match outcome.best_epoch {
        Some(epoch) => println!(
            "trained {} epochs in {:.1}s over {}/{}/{} documents; best val macro-F1 {:.4} at epoch {}; wrote {}",
            outcome.log.len(),
            started.elapsed().as_secs_f64(),
            split.train.len(),
            split.val.len(),
            split.test.len(),
            outcome.best_val_macro_f1,
            epoch,
            ckpt_path.display()
        ),
        None => println!(
            "trained {} epochs in {:.1}s over {}/{}/{} documents; wrote {}",
            outcome.log.len(),
            started.elapsed().as_secs_f64(),
            split.train.len(),
            split.val.len(),
            split.test.len(),
            ckpt_path.display()
        ),
    }
    Ok(())
}

fn cmd_predict(
    config: &RunConfig,
    corpus: &Option<PathBuf>,
    embeddings: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
) -> Result<()> {
    let corpus_dir = require_path(corpus, &config.corpus_dir, "corpus", "corpus_dir")?;
    let embed_path = require_path(
        embeddings,
        &config.embeddings_file,
        "embeddings",
        "embeddings_file",
    )?;
    let ckpt_path = require_path(
        checkpoint,
        &config.checkpoint_file,
        "checkpoint",
        "checkpoint_file",
    )?;
    let dir = out_dir(config)?;

    let docs = load_corpus(&corpus_dir)?;
    let model = load_model(&ckpt_path, load_vectors(&embed_path)?)?;
    let decode_config = DecodeConfig {
        gamma: config.gamma,
    };
    let mut records = Vec::with_capacity(docs.len());
    for doc in &docs {
        let pass = model
            .forward(&doc.token_texts())
            .with_context(|| format!("document {}", doc.id))?;
        let lattice = build_prior_lattice(doc.len(), model.config().prior_count);
        let boxes = decode(&pass.grids(), &lattice, &decode_config);
        records.push(PredictionRecord::from_boxes(&doc.id, &boxes, doc.len())?);
    }
    let out_path = dir.join("predictions.jsonl");
    let file = File::create(&out_path)?;
    write_predictions(&records, BufWriter::new(file))?;
    let boxes: usize = records.iter().map(|r| r.boxes.len()).sum();
    println!(
        "decoded {} documents ({} boxes at gamma {}) into {}",
        records.len(),
        boxes,
        config.gamma,
        out_path.display()
    );
    Ok(())
}

fn cmd_eval(
    config: &RunConfig,
    predictions: &Option<PathBuf>,
    corpus: &Option<PathBuf>,
) -> Result<()> {
    let pred_path = predictions
        .clone()
        .context("missing predictions: pass --predictions")?;
    let corpus_dir = require_path(corpus, &config.corpus_dir, "corpus", "corpus_dir")?;
    let dir = out_dir(config)?;

    let docs = load_corpus(&corpus_dir)?;
    let file = File::open(&pred_path).with_context(|| format!("opening {}", pred_path.display()))?;
    let records = read_predictions(BufReader::new(file))?;
    let by_id: BTreeMap<&str, &PredictionRecord> =
        records.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    if by_id.len() != records.len() {
        bail!("predictions contain duplicate document ids");
    }
    for r in &records {
        if !docs.iter().any(|d| d.id == r.doc_id) {
            bail!("prediction for unknown document {}", r.doc_id);
        }
    }

    let mut pred_labels = Vec::with_capacity(docs.len());
    let mut gold_labels = Vec::with_capacity(docs.len());
    let mut pred_spans = Vec::with_capacity(docs.len());
    let mut gold_spans = Vec::with_capacity(docs.len());
    for doc in &docs {
        let record = by_id
            .get(doc.id.as_str())
            .with_context(|| format!("no prediction for document {}", doc.id))?;
        if record.token_labels.len() != doc.len() {
            bail!(
                "document {}: prediction carries {} token labels, document has {} tokens",
                doc.id,
                record.token_labels.len(),
                doc.len()
            );
        }
        pred_labels.push(
            record
                .token_labels
                .iter()
                .map(|&c| AssertionClass(c))
                .collect::<Vec<_>>(),
        );
        gold_labels.push(boxes_to_token_labels(&doc.gold, doc.len())?);
        pred_spans.push(record.labeled_spans()?);
        gold_spans.push(doc.gold.clone());
    }

    let report = token_prf(&pred_labels, &gold_labels, config.class_count)?;
    let exact = span_exact_prf(&pred_spans, &gold_spans, config.class_count)?;
    let buckets = iou_by_scope_length(&pred_spans, &gold_spans)?;
    let lengths = scope_length_histogram(&gold_spans);

    let mut text = String::new();
    text.push_str("token-level scores\n");
    text.push_str(&report.to_text());
    text.push_str("\nspan-exact scores\n");
    text.push_str(&exact.to_text());
    text.push_str("\ngold scope lengths\n");
    text.push_str(&lengths.to_text());
    print!("{text}");

    fs::write(dir.join("eval.txt"), &text)?;
    fs::write(dir.join("eval.tsv"), report.to_tsv())?;
    fs::write(dir.join("span_exact.tsv"), exact.to_tsv())?;
    fs::write(
        dir.join("iou_by_length.tsv"),
        scopeloc_core::eval::iou_buckets_to_tsv(&buckets),
    )?;
    fs::write(dir.join("scope_lengths.tsv"), lengths.to_tsv())?;
    println!("wrote eval reports to {}", dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradcheck(
    config: &RunConfig,
    seq_len: usize,
    embed_dim: usize,
    priors: usize,
    classes: usize,
    filters: usize,
    tolerance: f64,
) -> Result<()> {
    let mut system = scopeloc_core::synthetic_gradcheck_system(
        seq_len, embed_dim, priors, classes, filters, config.seed,
    )?;
    let report = gradient_check(&mut system, GRADCHECK_EPS)?;
    println!(
        "checked {} parameter elements: max relative error {:.3e} at {}",
        report.elements_checked, report.max_rel_error, report.worst_param
    );
    if report.max_rel_error >= tolerance {
        bail!(
            "gradient check failed: max relative error {:.3e} >= tolerance {:.0e}",
            report.max_rel_error,
            tolerance
        );
    }
    println!("gradient check passed (tolerance {tolerance:e})");
    Ok(())
}

fn cmd_sweep_gamma(
    config: &RunConfig,
    corpus: &Option<PathBuf>,
    embeddings: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    gammas: Option<&str>,
) -> Result<()> {
    let corpus_dir = require_path(corpus, &config.corpus_dir, "corpus", "corpus_dir")?;
    let embed_path = require_path(
        embeddings,
        &config.embeddings_file,
        "embeddings",
        "embeddings_file",
    )?;
    let ckpt_path = require_path(
        checkpoint,
        &config.checkpoint_file,
        "checkpoint",
        "checkpoint_file",
    )?;
    let dir = out_dir(config)?;

    let grid = match gammas {
        Some(list) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("bad gamma value {s:?}"))
            })
            .collect::<Result<Vec<f64>>>()?,
        None => {
            let mut grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
            grid.push(1.01);
            grid
        }
    };
    if grid.is_empty() {
        bail!("empty gamma grid");
    }

    let docs = load_corpus(&corpus_dir)?;
    let model = load_model(&ckpt_path, load_vectors(&embed_path)?)?;
    let mut grids: Vec<PredictionGrids> = Vec::with_capacity(docs.len());
    let mut seq_lens = Vec::with_capacity(docs.len());
    let mut gold: Vec<Vec<LabeledSpan>> = Vec::with_capacity(docs.len());
    for doc in &docs {
        let pass = model
            .forward(&doc.token_texts())
            .with_context(|| format!("document {}", doc.id))?;
        grids.push(pass.grids());
        seq_lens.push(doc.len());
        gold.push(doc.gold.clone());
    }
    let rows = sweep_gamma(&grids, &gold, &seq_lens, &grid, config.class_count)?;
    let table = scopeloc_core::eval::sweep_to_tsv(&rows);
    print!("{table}");
    let out_path = dir.join("gamma_sweep.tsv");
    fs::write(&out_path, &table)?;
    println!("wrote {}", out_path.display());
    Ok(())
}
