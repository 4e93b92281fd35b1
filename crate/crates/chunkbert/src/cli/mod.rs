//! Command-line interface: `train`, `eval`, `infer`, and `memreport`.
//!
//! Datasets are JSON-lines files, one `{"text": ..., "labels": [...]}`
//! object per line, with a companion label file listing one label name per
//! line (the line index is the label id). Every setting resolves with the
//! same precedence: explicit flag, then config file, then built-in default.

pub mod checkpoint;

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::TextCnnConfig;
use crate::baselines::BaselineError;
use crate::chunking::{memory_report, ChunkError, ChunkLayout, ChunkMode, MemoryMode};
use crate::encoder::EncoderConfig;
use crate::numerics::{no_grad, sigmoid, softmax_probs};
use crate::tokenizer::{build_vocab, word_tokens, TokenizerError, Vocabulary};
use crate::trainer::{
    run_experiment, DataSplits, Evaluation, LabeledDocument, Model, ModelKind, TaskKind,
    TrainConfig, TrainError,
};
use crate::util::fnv1a64;

use checkpoint::{
    load_checkpoint, model_from_checkpoint, save_checkpoint, CheckpointHeader, FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: malformed record: {source}")]
    BadRecord { path: String, line: usize, source: serde_json::Error },
    #[error("{path}:{line}: unknown label \"{label}\"")]
    UnknownLabel { path: String, line: usize, label: String },
    #[error("label file {path} is empty")]
    NoLabels { path: String },
    #[error("{path} is not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("checkpoint {path} is truncated or has trailing bytes")]
    Truncated { path: String },
    #[error("checkpoint {path} has format version {found}, this build reads {supported}")]
    BadVersion { path: String, found: u32, supported: u32 },
    #[error("vocabulary hash mismatch: checkpoint was built with {expected:#018x} but {path} hashes to {found:#018x}")]
    VocabHashMismatch { path: String, expected: u64, found: u64 },
    #[error("checkpoint holds {found} tensors, the model needs {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("parameter {name}: checkpoint shape {found:?} does not match expected {expected:?}")]
    TensorShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("input text is empty")]
    EmptyInput,
    #[error("config file {path}: {source}")]
    BadConfig { path: String, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

impl CliError {
    /// 2 for missing files, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            CliError::Tokenizer(TokenizerError::Io { source, .. })
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                2
            }
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "chunkbert",
    about = "Long-text classification with chunked transformer encoding",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one or more models and write checkpoints plus metrics.
    Train(TrainArgs),
    /// Score a checkpoint against a labeled dataset.
    Eval(EvalArgs),
    /// Classify a single text with a checkpoint.
    Infer(InferArgs),
    /// Print attention memory accounting for length/chunk combinations.
    Memreport(MemArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Chunkbert,
    Truncation,
    Random,
    Textrank,
}

impl From<ModelArg> for ModelKind {
    fn from(value: ModelArg) -> Self {
        match value {
            ModelArg::Chunkbert => ModelKind::ChunkBert,
            ModelArg::Truncation => ModelKind::Truncation,
            ModelArg::Random => ModelKind::Random,
            ModelArg::Textrank => ModelKind::TextRank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sequential,
    Vectorized,
}

impl From<ModeArg> for ChunkMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::Sequential => ChunkMode::Sequential,
            ModeArg::Vectorized => ChunkMode::Vectorized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Binary,
    Multiclass,
    Multilabel,
}

impl From<TaskArg> for TaskKind {
    fn from(value: TaskArg) -> Self {
        match value {
            TaskArg::Binary => TaskKind::Binary,
            TaskArg::Multiclass => TaskKind::Multiclass,
            TaskArg::Multilabel => TaskKind::Multilabel,
        }
    }
}

/// Settings that follow flag > config file > default precedence. Every
/// field is optional here; [`resolve_settings`] fills the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file supplying any of the training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<u64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_position: Option<usize>,
    #[arg(long)]
    pub filters: Option<usize>,
    /// Convolution window widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Also evaluate on documents longer than this many tokens.
    #[arg(long)]
    pub long_only: Option<usize>,
}

/// The same settings as read from a JSON config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub runs: Option<usize>,
    pub max_tokens: Option<usize>,
    pub chunk_size: Option<usize>,
    pub model: Option<ModelKind>,
    pub mode: Option<ChunkMode>,
    pub vocab_size: Option<usize>,
    pub min_freq: Option<u64>,
    pub d_model: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_position: Option<usize>,
    pub filters: Option<usize>,
    pub windows: Option<Vec<usize>>,
    pub long_only: Option<usize>,
}

/// Fully resolved training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub model: ModelKind,
    pub mode: ChunkMode,
    pub vocab_size: usize,
    pub min_freq: u64,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub max_position: usize,
    pub filters: usize,
    pub windows: Vec<usize>,
    pub long_only: Option<usize>,
}

/// Applies flag > config file > built-in default, field by field.
pub fn resolve_settings(flags: &Overrides, file: &FileConfig) -> Settings {
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        learning_rate: flags
            .lr
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        batch_size: flags
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        max_epochs: flags.epochs.or(file.max_epochs).unwrap_or(defaults.max_epochs),
        patience: flags.patience.or(file.patience).unwrap_or(defaults.patience),
        runs: flags.runs.or(file.runs).unwrap_or(defaults.runs),
        max_tokens: flags
            .max_tokens
            .or(file.max_tokens)
            .unwrap_or(defaults.max_tokens),
        chunk_size: flags
            .chunk_size
            .or(file.chunk_size)
            .unwrap_or(defaults.chunk_size),
    };
    Settings {
        model: flags
            .model
            .map(ModelKind::from)
            .or(file.model)
            .unwrap_or(ModelKind::ChunkBert),
        mode: flags
            .mode
            .map(ChunkMode::from)
            .or(file.mode)
            .unwrap_or(ChunkMode::Vectorized),
        vocab_size: flags.vocab_size.or(file.vocab_size).unwrap_or(30_000),
        min_freq: flags.min_freq.or(file.min_freq).unwrap_or(1),
        d_model: flags.d_model.or(file.d_model).unwrap_or(32),
        num_layers: flags.num_layers.or(file.num_layers).unwrap_or(2),
        num_heads: flags.num_heads.or(file.num_heads).unwrap_or(2),
        d_ff: flags.d_ff.or(file.d_ff).unwrap_or(64),
        max_position: flags
            .max_position
            .or(file.max_position)
            .unwrap_or(train.chunk_size.max(512)),
        filters: flags.filters.or(file.filters).unwrap_or(100),
        windows: flags
            .windows
            .clone()
            .or_else(|| file.windows.clone())
            .unwrap_or_else(|| vec![3, 4, 5]),
        long_only: flags.long_only.or(file.long_only),
        train,
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training split, JSON lines.
    #[arg(long)]
    pub train: PathBuf,
    /// Development split used for early stopping.
    #[arg(long)]
    pub dev: PathBuf,
    /// Test split reported in the metrics.
    #[arg(long)]
    pub test: PathBuf,
    /// Label names, one per line; line number is the label id.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Directory for checkpoints, logs, vocabulary, and metrics.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score, JSON lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file; defaults to vocab.txt beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Label file; defaults to labels.txt beside the checkpoint.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Only score documents longer than this many word tokens.
    #[arg(long)]
    pub long_only: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text to classify.
    #[arg(long, conflicts_with = "stdin")]
    pub text: Option<String>,
    /// Read the text from standard input instead.
    #[arg(long)]
    pub stdin: bool,
    /// Truncate the input to this many tokens; unlimited when absent.
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Include chunk and attention-memory accounting in the output.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct MemArgs {
    /// Padded sequence lengths, comma separated.
    #[arg(long = "T", value_delimiter = ',', required = true)]
    pub total_lens: Vec<usize>,
    /// Chunk sizes, comma separated.
    #[arg(long = "C", value_delimiter = ',', required = true)]
    pub chunk_sizes: Vec<usize>,
}

/// Parses arguments, runs the chosen command, and reports errors on
/// stderr. Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Infer(args) => cmd_infer(&args),
        Command::Memreport(args) => cmd_memreport(&args),
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads the label map: one label per line, line index = label id.
pub fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let text = read_to_string(path)?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if labels.is_empty() {
        return Err(CliError::NoLabels { path: path.display().to_string() });
    }
    Ok(labels)
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    labels: Vec<String>,
}

/// Reads a JSON-lines dataset, mapping label names to ids. Errors carry
/// 1-based line numbers.
pub fn read_dataset(
    path: &Path,
    label_ids: &HashMap<String, usize>,
) -> Result<Vec<LabeledDocument>, CliError> {
    let text = read_to_string(path)?;
    let mut docs = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord =
            serde_json::from_str(line).map_err(|source| CliError::BadRecord {
                path: path.display().to_string(),
                line: index + 1,
                source,
            })?;
        let mut labels = Vec::with_capacity(record.labels.len());
        for name in &record.labels {
            let id = label_ids.get(name).ok_or_else(|| CliError::UnknownLabel {
                path: path.display().to_string(),
                line: index + 1,
                label: name.clone(),
            })?;
            labels.push(*id);
        }
        labels.sort_unstable();
        labels.dedup();
        docs.push(LabeledDocument { text: record.text, labels });
    }
    Ok(docs)
}

fn label_map(labels: &[String]) -> HashMap<String, usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect()
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = read_to_string(p)?;
            serde_json::from_str(&text).map_err(|source| CliError::BadConfig {
                path: p.display().to_string(),
                source,
            })
        }
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let file_config = load_file_config(args.overrides.config.as_ref())?;
    let settings = resolve_settings(&args.overrides, &file_config);
    settings.train.validate()?;

    let label_names = read_labels(&args.labels)?;
    let ids = label_map(&label_names);
    let data = DataSplits {
        train: read_dataset(&args.train, &ids)?,
        dev: read_dataset(&args.dev, &ids)?,
        test: read_dataset(&args.test, &ids)?,
    };

    let train_texts: Vec<&str> = data.train.iter().map(|d| d.text.as_str()).collect();
    let vocab = build_vocab(&train_texts, settings.vocab_size, settings.min_freq)?;

    fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;
    let vocab_path = args.out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let vocab_hash = fnv1a64(&vocab.to_file_bytes());
    fs::write(args.out_dir.join("labels.txt"), label_names.join("\n") + "\n").map_err(
        |source| CliError::Io {
            path: args.out_dir.display().to_string(),
            source,
        },
    )?;

    let encoder_config = EncoderConfig {
        num_layers: settings.num_layers,
        num_heads: settings.num_heads,
        d_model: settings.d_model,
        d_ff: settings.d_ff,
        vocab_size: vocab.len(),
        max_position: settings.max_position,
        average_last_k: 5.min(settings.num_layers + 1),
    };
    let head_config = TextCnnConfig {
        window_sizes: settings.windows.clone(),
        filters_per_window: settings.filters,
        num_classes: label_names.len(),
        dropout: None,
    };
    let task = TaskKind::from(args.task);

    let (result, trained) = run_experiment::<f32>(
        settings.model,
        &encoder_config,
        &head_config,
        settings.mode,
        &vocab,
        &data,
        task,
        &settings.train,
        settings.long_only,
    )?;

    for (run, (model, log)) in trained.iter().enumerate() {
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            model: settings.model,
            task,
            encoder: encoder_config.clone(),
            head: head_config.clone(),
            chunk_size: settings.train.chunk_size,
            mode: settings.mode,
            max_tokens: settings.train.max_tokens,
            seed: settings.train.seed.wrapping_add(run as u64),
            vocab_hash,
        };
        save_checkpoint(
            &args.out_dir.join(format!("run{run}.ckpt")),
            &header,
            &model.all_parameters(),
        )?;
        let mut lines = String::new();
        for epoch in &log.epochs {
            lines.push_str(&serde_json::to_string(epoch)?);
            lines.push('\n');
        }
        fs::write(args.out_dir.join(format!("run{run}.log.jsonl")), lines).map_err(
            |source| CliError::Io {
                path: args.out_dir.display().to_string(),
                source,
            },
        )?;
    }

    let metrics = serde_json::to_string_pretty(&result)?;
    fs::write(args.out_dir.join("metrics.json"), format!("{metrics}\n")).map_err(|source| {
        CliError::Io {
            path: args.out_dir.display().to_string(),
            source,
        }
    })?;
    println!("{metrics}");
    Ok(())
}

fn sibling(checkpoint: &Path, default_name: &str, explicit: Option<&PathBuf>) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(default_name),
    }
}

fn load_model_and_vocab(
    checkpoint_path: &Path,
    vocab_flag: Option<&PathBuf>,
    labels_flag: Option<&PathBuf>,
) -> Result<(Model<f32>, CheckpointHeader, Vocabulary, Vec<String>), CliError> {
    let (header, tensors) = load_checkpoint(checkpoint_path)?;
    let vocab_path = sibling(checkpoint_path, "vocab.txt", vocab_flag);
    let vocab_bytes = fs::read(&vocab_path).map_err(|source| CliError::Io {
        path: vocab_path.display().to_string(),
        source,
    })?;
    let found = fnv1a64(&vocab_bytes);
    if found != header.vocab_hash {
        return Err(CliError::VocabHashMismatch {
            path: vocab_path.display().to_string(),
            expected: header.vocab_hash,
            found,
        });
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let labels = read_labels(&sibling(checkpoint_path, "labels.txt", labels_flag))?;
    let model = model_from_checkpoint(&header, &tensors)?;
    Ok((model, header, vocab, labels))
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let (model, header, vocab, labels) =
        load_model_and_vocab(&args.checkpoint, args.vocab.as_ref(), args.labels.as_ref())?;
    let docs = read_dataset(&args.data, &label_map(&labels))?;
    let result: Evaluation = crate::trainer::evaluate(
        &model,
        &vocab,
        &docs,
        header.task,
        header.max_tokens,
        args.long_only,
    )?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

/// One scored class in inference output.
#[derive(Serialize)]
struct LabelScore {
    label: String,
    score: f64,
}

#[derive(Serialize)]
struct InferReport {
    task: TaskKind,
    predicted: Vec<String>,
    scores: Vec<LabelScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chunks: Option<ChunkAccounting>,
}

#[derive(Serialize)]
struct ChunkAccounting {
    padded_len: usize,
    chunk_size: usize,
    num_chunks: usize,
    attention_entries: u64,
}

fn cmd_infer(args: &InferArgs) -> Result<(), CliError> {
    let (model, header, vocab, labels) =
        load_model_and_vocab(&args.checkpoint, args.vocab.as_ref(), args.labels.as_ref())?;
    let text = match (&args.text, args.stdin) {
        (Some(t), _) => t.clone(),
        (None, true) => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(|source| CliError::Io { path: "<stdin>".into(), source })?;
            buf
        }
        (None, false) => return Err(CliError::EmptyInput),
    };
    if text.trim().is_empty() {
        return Err(CliError::EmptyInput);
    }

    // Without a cap the whole document is kept: the token budget is the
    // document's own length.
    let max_tokens = args.max_tokens.unwrap_or(word_tokens(&text).len() + 2).max(3);
    let logits =
        no_grad(|| model.batch_logits(&vocab, &[text.as_str()], max_tokens))?;
    let raw: Vec<f64> = logits.to_vec().iter().map(|v| *v as f64).collect();

    let (scores, predicted): (Vec<f64>, Vec<usize>) = match header.task {
        TaskKind::Binary | TaskKind::Multiclass => {
            let probs = softmax_probs(&raw);
            let best = (0..raw.len()).fold(0, |b, i| if raw[i] > raw[b] { i } else { b });
            (probs, vec![best])
        }
        TaskKind::Multilabel => {
            let probs: Vec<f64> = raw.iter().map(|&z| sigmoid(z)).collect();
            let chosen = (0..raw.len()).filter(|&i| raw[i] >= 0.0).collect();
            (probs, chosen)
        }
    };

    let chunks = if args.verbose && matches!(header.model, ModelKind::ChunkBert) {
        let tokens = vocab.tokenize(&text, max_tokens).token_ids.len();
        let layout = ChunkLayout::new(
            tokens.max(1).div_ceil(header.chunk_size) * header.chunk_size,
            header.chunk_size,
        )?;
        let mode = match header.mode {
            ChunkMode::Sequential => MemoryMode::Sequential,
            ChunkMode::Vectorized => MemoryMode::Vectorized,
        };
        let report = memory_report(layout.total_len, header.chunk_size, mode)?;
        Some(ChunkAccounting {
            padded_len: layout.total_len,
            chunk_size: header.chunk_size,
            num_chunks: layout.num_chunks,
            attention_entries: report.attention_entries,
        })
    } else {
        None
    };

    let report = InferReport {
        task: header.task,
        predicted: predicted.iter().map(|&i| labels[i].clone()).collect(),
        scores: labels
            .iter()
            .zip(&scores)
            .map(|(label, &score)| LabelScore { label: label.clone(), score })
            .collect(),
        chunks,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_memreport(args: &MemArgs) -> Result<(), CliError> {
    for &t in &args.total_lens {
        for &c in &args.chunk_sizes {
            if c == 0 || t == 0 || t % c != 0 {
                eprintln!("skipping T={t} C={c}: length must be a positive multiple of the chunk size");
                continue;
            }
            for mode in [MemoryMode::Sequential, MemoryMode::Vectorized, MemoryMode::Full] {
                let report = memory_report(t, c, mode)?;
                println!("{}", serde_json::to_string(&report)?);
            }
        }
    }
    Ok(())
}
