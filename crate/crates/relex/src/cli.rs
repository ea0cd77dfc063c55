//! Command-line interface: corpus generation, training, evaluation,
//! scoring, and the kernel benchmark.
//!
//! Exit codes: 0 success, 1 usage, 2 validation/config/IO, 3 numeric
//! failure. Flag values win over `--config` file entries, which win over
//! the built-in defaults. The config file is a flat `key = value` TOML
//! table using the flag names with underscores.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;

use crate::bench::{self, Variant};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{load_documents, save_documents, Document, Vocabs};
use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_ner, evaluate_re, PrfReport, ReEvalReport};
use crate::model::{Model, ModelConfig};
use crate::synth::{gen_synthetic, split_documents, SynthConfig, NEGATIVE_RELATION};
use crate::training::{train, tune_alpha, TrainConfig, TuneMode};
use crate::util::RunRng;

#[derive(Debug, Parser)]
#[command(
    name = "relex",
    version,
    about = "First- and second-order document-level relation scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic bridge-token corpus as train/dev/test files
    GenSynth(GenSynthArgs),
    /// Train the joint relation + tagging model and write a checkpoint
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a dataset and print a metrics report
    Eval(EvalArgs),
    /// Dump per-pair relation predictions as JSON lines
    Score(ScoreArgs),
    /// Benchmark the naive vs. memory-efficient second-order kernels
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for every random choice in this run
    #[arg(long)]
    seed: Option<u64>,
    /// Upper bound on worker threads (this build executes on one)
    #[arg(long)]
    threads: Option<usize>,
    /// Flat key = value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("fraction {v} lies outside [0, 1]"))
    }
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Directory receiving train.jsonl, dev.jsonl, and test.jsonl
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of documents before splitting [default: 1000]
    #[arg(long)]
    num_docs: Option<usize>,
    /// Tokens per document [default: 24]
    #[arg(long)]
    doc_len: Option<usize>,
    /// Filler vocabulary size [default: 96]
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Positive relation types [default: 4]
    #[arg(long)]
    relation_types: Option<usize>,
    /// Fraction of documents holding a positive relation [default: 0.5]
    #[arg(long, value_parser = parse_fraction)]
    positive_fraction: Option<f64>,
    /// Training split fraction [default: 0.8]
    #[arg(long, value_parser = parse_fraction)]
    train_frac: Option<f64>,
    /// Development split fraction [default: 0.1]
    #[arg(long, value_parser = parse_fraction)]
    dev_frac: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Relation-task training corpus (JSON lines)
    #[arg(long)]
    train: PathBuf,
    /// Development corpus for model selection
    #[arg(long)]
    dev: PathBuf,
    /// Tagging-task corpus; defaults to the relation training corpus
    #[arg(long)]
    ner_train: Option<PathBuf>,
    /// Checkpoint output path [default: model.json]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-epoch metrics output (JSON lines) [default: metrics.jsonl]
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Encoder kind: transformer or bag [default: transformer]
    #[arg(long)]
    encoder: Option<String>,
    /// Encoder width [default: 64]
    #[arg(long)]
    d_model: Option<usize>,
    /// Encoder layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads [default: 8]
    #[arg(long)]
    heads: Option<usize>,
    /// Convolutional feed-forward filters [default: 256]
    #[arg(long)]
    ffn_filters: Option<usize>,
    /// Dropout rate [default: 0.3]
    #[arg(long)]
    dropout: Option<f64>,
    /// Whole-word dropout rate [default: 0.15]
    #[arg(long)]
    word_dropout: Option<f64>,
    /// Positional capacity; defaults to the longest loaded document
    #[arg(long)]
    max_len: Option<usize>,
    /// Head/tail MLP hidden width [default: 64]
    #[arg(long)]
    proj_hidden: Option<usize>,
    /// Head/tail MLP output width [default: 32]
    #[arg(long)]
    proj_dim: Option<usize>,
    /// Second-order weight; 0 disables the second-order path [default: 0.2]
    #[arg(long)]
    alpha: Option<f64>,
    /// Adam learning rate [default: 0.0005]
    #[arg(long)]
    learn_rate: Option<f64>,
    /// Global gradient-norm clip [default: 5]
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Adam first-moment decay [default: 0.1]
    #[arg(long)]
    beta1: Option<f64>,
    /// Adam second-moment decay [default: 0.9]
    #[arg(long)]
    beta2: Option<f64>,
    /// Adam denominator epsilon [default: 1e-8]
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Training epochs [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Documents per batch [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Name of the negative relation class [default: none]
    #[arg(long)]
    negative_relation: Option<String>,
    /// Sweep alpha and keep the best model: retrain or rescore
    #[arg(long)]
    tune_alpha: Option<String>,
    /// Alpha values for --tune-alpha [default: 0,0.2,1]
    #[arg(long, value_delimiter = ',')]
    alpha_sweep: Option<Vec<f64>>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint produced by the train command
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to evaluate (JSON lines)
    #[arg(long)]
    data: PathBuf,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Documents per batch [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Checkpoint produced by the train command
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to score (JSON lines)
    #[arg(long)]
    data: PathBuf,
    /// Write predictions here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Documents per batch [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Document lengths to benchmark [default: 16,32,64]
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Kernel variant: naive or efficient [default: both]
    #[arg(long)]
    variant: Option<String>,
    /// Measured repetitions per configuration [default: 1]
    #[arg(long)]
    repeats: Option<usize>,
    /// Relation types [default: 4]
    #[arg(long)]
    r: Option<usize>,
    /// Documents per batch [default: 2]
    #[arg(long)]
    batch: Option<usize>,
    /// Candidate pairs per document [default: 2]
    #[arg(long)]
    pairs_per_doc: Option<usize>,
    /// Write records here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Flat key/value config file contents.
struct FileConfig(toml::Table);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig(toml::Table::new()));
        };
        let text = fs::read_to_string(path)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("config file {}: {e}", path.display())))?;
        for (key, value) in &table {
            if value.is_table() {
                return Err(Error::config(format!(
                    "config file {} must be flat, but {key:?} is a table",
                    path.display()
                )));
            }
        }
        Ok(FileConfig(table))
    }

    fn bad_type(&self, key: &str, want: &str) -> Error {
        Error::config(format!("config key {key:?} must be {want}, got {:?}", self.0[key]))
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| usize::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| self.bad_type(key, "a non-negative integer")),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .map(Some)
                .ok_or_else(|| self.bad_type(key, "a non-negative integer")),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .ok_or_else(|| self.bad_type(key, "a number")),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| self.bad_type(key, "a string")),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => {
                let arr = v.as_array().ok_or_else(|| self.bad_type(key, "an array"))?;
                arr.iter()
                    .map(|e| {
                        e.as_float()
                            .or_else(|| e.as_integer().map(|i| i as f64))
                            .ok_or_else(|| self.bad_type(key, "an array of numbers"))
                    })
                    .collect::<Result<Vec<f64>>>()
                    .map(Some)
            }
        }
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => {
                let arr = v.as_array().ok_or_else(|| self.bad_type(key, "an array"))?;
                arr.iter()
                    .map(|e| {
                        e.as_integer()
                            .and_then(|i| usize::try_from(i).ok())
                            .ok_or_else(|| self.bad_type(key, "an array of non-negative integers"))
                    })
                    .collect::<Result<Vec<usize>>>()
                    .map(Some)
            }
        }
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn resolve_common(common: &Common, file: &FileConfig) -> Result<u64> {
    let threads = pick(common.threads, file.usize("threads")?, 1);
    if threads == 0 {
        return Err(Error::config("threads must be at least 1"));
    }
    if threads > 1 {
        log::debug!("--threads {threads} accepted as an upper bound; running on one thread");
    }
    Ok(pick(common.seed, file.u64("seed")?, 0))
}

/// Process exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

pub fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::Score(args) => cmd_score(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_common(&args.common, &file)?;
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        num_docs: pick(args.num_docs, file.usize("num_docs")?, defaults.num_docs),
        doc_len: pick(args.doc_len, file.usize("doc_len")?, defaults.doc_len),
        vocab_size: pick(args.vocab_size, file.usize("vocab_size")?, defaults.vocab_size),
        num_relation_types: pick(
            args.relation_types,
            file.usize("relation_types")?,
            defaults.num_relation_types,
        ),
        positive_fraction: pick(
            args.positive_fraction,
            file.f64("positive_fraction")?,
            defaults.positive_fraction,
        ),
        seed,
        ..defaults
    };
    let train_frac = pick(args.train_frac, file.f64("train_frac")?, 0.8);
    let dev_frac = pick(args.dev_frac, file.f64("dev_frac")?, 0.1);
    let test_frac = 1.0 - train_frac - dev_frac;
    let out_dir = pick(
        args.out_dir,
        file.string("out_dir")?.map(PathBuf::from),
        PathBuf::from("."),
    );

    let docs = gen_synthetic(&config)?;
    let (train, dev, test) = split_documents(docs, train_frac, dev_frac, test_frac)?;
    fs::create_dir_all(&out_dir)?;
    save_documents(out_dir.join("train.jsonl"), &train)?;
    save_documents(out_dir.join("dev.jsonl"), &dev)?;
    save_documents(out_dir.join("test.jsonl"), &test)?;
    println!(
        "wrote {} train / {} dev / {} test documents to {}",
        train.len(),
        dev.len(),
        test.len(),
        out_dir.display()
    );
    Ok(())
}

struct TrainSetup {
    model_config: ModelConfig,
    train_config: TrainConfig,
    re_docs: Vec<Document>,
    ner_docs: Vec<Document>,
    dev_docs: Vec<Document>,
    vocabs: Vocabs,
}

fn resolve_train(args: &TrainArgs) -> Result<TrainSetup> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_common(&args.common, &file)?;

    let re_docs = load_documents(&args.train)?;
    let dev_docs = load_documents(&args.dev)?;
    let ner_docs = match &args.ner_train {
        Some(path) => load_documents(path)?,
        None => re_docs.clone(),
    };
    let negative = pick(
        args.negative_relation.clone(),
        file.string("negative_relation")?,
        NEGATIVE_RELATION.to_string(),
    );
    let mut vocab_docs = re_docs.clone();
    vocab_docs.extend(ner_docs.iter().cloned());
    let vocabs = Vocabs::from_documents(&vocab_docs, &negative)?;

    let longest = re_docs
        .iter()
        .chain(&ner_docs)
        .chain(&dev_docs)
        .map(|d| d.tokens.len())
        .max()
        .unwrap_or(1)
        .max(1);
    let max_len = pick(args.max_len, file.usize("max_len")?, longest);

    let enc_defaults = EncoderConfig::new(vocabs.tokens.len(), max_len);
    let encoder = EncoderConfig {
        vocab_size: vocabs.tokens.len(),
        d_model: pick(args.d_model, file.usize("d_model")?, enc_defaults.d_model),
        num_layers: pick(args.layers, file.usize("layers")?, enc_defaults.num_layers),
        num_heads: pick(args.heads, file.usize("heads")?, enc_defaults.num_heads),
        ffn_filters: pick(args.ffn_filters, file.usize("ffn_filters")?, enc_defaults.ffn_filters),
        dropout: pick(args.dropout, file.f64("dropout")?, enc_defaults.dropout),
        word_dropout: pick(
            args.word_dropout,
            file.f64("word_dropout")?,
            enc_defaults.word_dropout,
        ),
        max_len,
    };
    let kind_name = pick(args.encoder.clone(), file.string("encoder")?, "transformer".into());
    let defaults = ModelConfig::new(encoder.clone(), vocabs.relations.len(), vocabs.tags.len());
    let model_config = ModelConfig {
        encoder,
        encoder_kind: EncoderKind::parse(&kind_name)?,
        proj_hidden: pick(args.proj_hidden, file.usize("proj_hidden")?, defaults.proj_hidden),
        proj_dim: pick(args.proj_dim, file.usize("proj_dim")?, defaults.proj_dim),
        num_relations: defaults.num_relations,
        num_tags: defaults.num_tags,
        alpha: pick(args.alpha, file.f64("alpha")?, defaults.alpha),
    };
    let tc_defaults = TrainConfig::default();
    let train_config = TrainConfig {
        learn_rate: pick(args.learn_rate, file.f64("learn_rate")?, tc_defaults.learn_rate),
        clip_norm: pick(args.clip_norm, file.f64("clip_norm")?, tc_defaults.clip_norm),
        adam_beta1: pick(args.beta1, file.f64("beta1")?, tc_defaults.adam_beta1),
        adam_beta2: pick(args.beta2, file.f64("beta2")?, tc_defaults.adam_beta2),
        adam_eps: pick(args.adam_eps, file.f64("adam_eps")?, tc_defaults.adam_eps),
        epochs: pick(args.epochs, file.usize("epochs")?, tc_defaults.epochs),
        batch_size: pick(args.batch_size, file.usize("batch_size")?, tc_defaults.batch_size),
        seed,
        alpha_sweep: pick(
            args.alpha_sweep.clone(),
            file.f64_list("alpha_sweep")?,
            tc_defaults.alpha_sweep,
        ),
        deterministic: true,
    };
    model_config.validate()?;
    train_config.validate()?;
    Ok(TrainSetup { model_config, train_config, re_docs, ner_docs, dev_docs, vocabs })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        writeln!(out)?;
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let setup = resolve_train(&args)?;
    let out_path = args.out.clone().unwrap_or_else(|| PathBuf::from("model.json"));
    let metrics_path = args.metrics.clone().unwrap_or_else(|| PathBuf::from("metrics.jsonl"));

    if let Some(mode) = &args.tune_alpha {
        let mode = TuneMode::parse(mode)?;
        let outcome = tune_alpha(
            &setup.model_config,
            &setup.re_docs,
            &setup.ner_docs,
            &setup.dev_docs,
            &setup.vocabs,
            &setup.train_config,
            mode,
        )?;
        #[derive(Serialize)]
        struct SweepRow {
            alpha: f64,
            dev_f1: f64,
        }
        let rows: Vec<SweepRow> =
            outcome.scores.iter().map(|&(alpha, dev_f1)| SweepRow { alpha, dev_f1 }).collect();
        write_jsonl(&metrics_path, &rows)?;
        save_checkpoint(&out_path, &outcome.model, &setup.vocabs)?;
        for (alpha, f1) in &outcome.scores {
            println!("alpha {alpha}: dev macro-F1 {f1:.4}");
        }
        println!(
            "selected alpha {} -> checkpoint {}",
            outcome.best_alpha,
            out_path.display()
        );
        return Ok(());
    }

    let mut rng = RunRng::seed_from_u64(setup.train_config.seed);
    let model = Model::new(setup.model_config.clone(), &mut rng)?;
    log::info!("training a model with {} parameters", model.num_parameters());
    let outcome = train(
        model,
        &setup.re_docs,
        &setup.ner_docs,
        &setup.dev_docs,
        &setup.vocabs,
        &setup.train_config,
        &mut rng,
    )?;
    write_jsonl(&metrics_path, &outcome.history)?;
    save_checkpoint(&out_path, &outcome.model, &setup.vocabs)?;
    match outcome.best_epoch {
        Some(epoch) => println!(
            "best epoch {epoch}: dev macro-F1 {:.4} -> checkpoint {}",
            outcome.best_dev_f1,
            out_path.display()
        ),
        None => println!("wrote the untrained model to {}", out_path.display()),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    re: ReEvalReport,
    ner: PrfReport,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let _seed = resolve_common(&args.common, &file)?;
    let batch_size = pick(args.batch_size, file.usize("batch_size")?, 16);
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let (model, vocabs) = load_checkpoint(&args.checkpoint)?;
    let docs = load_documents(&args.data)?;
    let (re, _) = evaluate_re(&model, &docs, &vocabs, batch_size)?;
    let ner = evaluate_ner(&model, &docs, &vocabs, batch_size)?;
    let output = EvalOutput { re, ner };
    let text = serde_json::to_string_pretty(&output)?;
    if let Some(path) = &args.out {
        fs::write(path, &text)?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let _seed = resolve_common(&args.common, &file)?;
    let batch_size = pick(args.batch_size, file.usize("batch_size")?, 16);
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let (model, vocabs) = load_checkpoint(&args.checkpoint)?;
    let docs = load_documents(&args.data)?;
    let (_, predictions) = evaluate_re(&model, &docs, &vocabs, batch_size)?;
    match &args.out {
        Some(path) => write_jsonl(path, &predictions)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for p in &predictions {
                serde_json::to_writer(&mut lock, p)?;
                writeln!(lock)?;
            }
        }
    }
    log::info!("scored {} candidate pairs", predictions.len());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let seed = resolve_common(&args.common, &file)?;
    let sizes = pick(args.sizes.clone(), file.usize_list("sizes")?, vec![16, 32, 64]);
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::config("sizes must be positive"));
    }
    let repeats = pick(args.repeats, file.usize("repeats")?, 1).max(1);
    let r = pick(args.r, file.usize("r")?, 4);
    let batch = pick(args.batch, file.usize("batch")?, 2);
    let pairs_per_doc = pick(args.pairs_per_doc, file.usize("pairs_per_doc")?, 2);
    let variants = match pick(args.variant.clone(), file.string("variant")?, String::new()) {
        s if s.is_empty() || s == "both" => vec![Variant::Naive, Variant::Efficient],
        s => vec![Variant::parse(&s)?],
    };

    let mut records = Vec::new();
    for &variant in &variants {
        for &n in &sizes {
            for rep in 0..repeats {
                let record = bench::run_case(
                    variant,
                    n,
                    r,
                    batch,
                    pairs_per_doc,
                    1,
                    seed.wrapping_add(rep as u64),
                )?;
                records.push(record);
            }
        }
    }
    match &args.out {
        Some(path) => write_jsonl(path, &records)?,
        None => {
            for record in &records {
                println!("{}", serde_json::to_string(record)?);
            }
        }
    }
    for &variant in &variants {
        let own: Vec<_> =
            records.iter().filter(|rec| rec.variant == variant).cloned().collect();
        if own.len() >= 2 && own.iter().all(|rec| rec.peak_aux_bytes > 0) {
            eprintln!(
                "{} peak-memory log-log slope: {:.3}",
                variant.as_str(),
                bench::memory_slope(&own)
            );
        }
    }
    Ok(())
}
