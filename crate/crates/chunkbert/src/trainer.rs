//! Finetuning loop, evaluation metrics, and multi-seed experiments.
//!
//! Training is plain mini-batch Adam with early stopping on a development
//! split. The dev metric is the same metric reported at test time, accuracy
//! for single-label tasks and micro-F1 for multilabel, and the parameters
//! of the best dev epoch are what training returns. Everything downstream
//! of the seed is deterministic: shuffling, parameter draws, and the random
//! selection baseline all derive named sub-seeds from one root.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{classify, AggregationError, TextCnnConfig, TextCnnParams};
use crate::baselines::{
    truncation_classify, two_pass_classify, BaselineError, SelectionKind, SelectionStrategy,
    TruncationHead, TwoPassHead,
};
use crate::chunking::ChunkMode;
use crate::encoder::{EncoderConfig, EncoderError, EncoderParams};
use crate::numerics::{
    adam_step, binary_cross_entropy_loss, concat_rows, cross_entropy_loss, no_grad, AdamState,
    Parameter, Scalar, Tensor, TensorError,
};
use crate::tokenizer::{pad_batch_to_chunk_multiple, word_tokens, TokenizerError, Vocabulary};
use crate::util::sub_seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("no documents longer than {threshold} tokens to evaluate")]
    EmptyAfterFilter { threshold: usize },
    #[error("document {index} has {count} labels, but task {task} needs exactly one")]
    LabelCount { index: usize, task: TaskKind, count: usize },
    #[error("document {index} has label {label}, valid ids are 0..{num_classes}")]
    LabelOutOfRange { index: usize, label: usize, num_classes: usize },
    #[error("loss became non-finite ({value}) in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("gold has {gold} documents but predictions have {pred}")]
    DocumentCountMismatch { gold: usize, pred: usize },
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("{field} must be positive")]
    ZeroField { field: &'static str },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// What kind of labels a dataset carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Multilabel,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass => "multiclass",
            TaskKind::Multilabel => "multilabel",
        })
    }
}

impl TaskKind {
    /// Name of the metric reported for this task.
    pub fn metric_name(&self) -> &'static str {
        match self {
            TaskKind::Binary | TaskKind::Multiclass => "accuracy",
            TaskKind::Multilabel => "micro_f1",
        }
    }
}

/// A document with its gold label ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub text: String,
    pub labels: Vec<usize>,
}

/// Knobs of the training loop.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub max_tokens: usize,
    pub chunk_size: usize,
    pub seed: u64,
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 8,
            max_epochs: 20,
            patience: 3,
            max_tokens: 4096,
            chunk_size: 128,
            seed: 0,
            runs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::BadLearningRate(self.learning_rate));
        }
        for (field, value) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("chunk_size", self.chunk_size),
            ("runs", self.runs),
        ] {
            if value == 0 {
                return Err(TrainError::ZeroField { field });
            }
        }
        if self.max_tokens < 3 {
            return Err(TrainError::ZeroField { field: "max_tokens" });
        }
        Ok(())
    }
}

/// Which classifier architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    ChunkBert,
    Truncation,
    Random,
    TextRank,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::ChunkBert => "chunkbert",
            ModelKind::Truncation => "truncation",
            ModelKind::Random => "random",
            ModelKind::TextRank => "textrank",
        })
    }
}

/// The classifier sitting on top of the shared encoder.
pub enum ClassifierHead<S: Scalar> {
    Chunked(TextCnnParams<S>),
    Truncated(TruncationHead<S>),
    TwoPass(TwoPassHead<S>),
}

/// Encoder plus head plus the knobs that shape a forward pass.
pub struct Model<S: Scalar> {
    pub kind: ModelKind,
    pub encoder: EncoderParams<S>,
    pub head: ClassifierHead<S>,
    pub chunk_size: usize,
    pub mode: ChunkMode,
}

const INIT_STD: f64 = 0.02;

impl<S: Scalar> Model<S> {
    /// Draws fresh parameters. All randomness comes from `seed` through
    /// named sub-seeds, so two models built with the same arguments are
    /// identical.
    pub fn init(
        kind: ModelKind,
        encoder_config: EncoderConfig,
        head_config: TextCnnConfig,
        chunk_size: usize,
        mode: ChunkMode,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "params"));
        let encoder = EncoderParams::init(encoder_config, &mut rng)?;
        let d = encoder.config.d_model;
        let classes = head_config.num_classes;
        let window = encoder.config.max_position.min(512);
        let budget = window.saturating_sub(2).max(1);
        let head = match kind {
            ModelKind::ChunkBert => {
                ClassifierHead::Chunked(TextCnnParams::init(head_config, d, INIT_STD, &mut rng)?)
            }
            ModelKind::Truncation => {
                ClassifierHead::Truncated(TruncationHead::init(d, classes, INIT_STD, &mut rng))
            }
            ModelKind::Random => ClassifierHead::TwoPass(TwoPassHead::init(
                SelectionStrategy {
                    kind: SelectionKind::Random { seed: sub_seed(seed, "selection") },
                    budget,
                },
                d,
                classes,
                INIT_STD,
                &mut rng,
            )),
            ModelKind::TextRank => ClassifierHead::TwoPass(TwoPassHead::init(
                SelectionStrategy { kind: SelectionKind::TextRank, budget },
                d,
                classes,
                INIT_STD,
                &mut rng,
            )),
        };
        Ok(Model { kind, encoder, head, chunk_size, mode })
    }

    pub fn num_classes(&self) -> usize {
        match &self.head {
            ClassifierHead::Chunked(h) => h.config.num_classes,
            ClassifierHead::Truncated(h) => h.projection.shape()[1],
            ClassifierHead::TwoPass(h) => h.projection.shape()[1],
        }
    }

    /// Token window the baselines read, bounded by the encoder's position
    /// table.
    pub fn window(&self) -> usize {
        self.encoder.config.max_position.min(512)
    }

    /// One row of logits per input text.
    pub fn batch_logits(
        &self,
        vocab: &Vocabulary,
        texts: &[&str],
        max_tokens: usize,
    ) -> Result<Tensor<S>, TrainError> {
        match &self.head {
            ClassifierHead::Chunked(head) => {
                let docs: Vec<_> = texts.iter().map(|t| vocab.tokenize(t, max_tokens)).collect();
                let batch = pad_batch_to_chunk_multiple(&docs, self.chunk_size)?;
                Ok(classify(&self.encoder, head, &batch, self.chunk_size, self.mode)?)
            }
            ClassifierHead::Truncated(head) => {
                let rows: Vec<Tensor<S>> = texts
                    .iter()
                    .map(|t| truncation_classify(&self.encoder, head, vocab, t, self.window()))
                    .collect::<Result<_, _>>()?;
                Ok(concat_rows(&rows))
            }
            ClassifierHead::TwoPass(head) => {
                let rows: Vec<Tensor<S>> = texts
                    .iter()
                    .map(|t| two_pass_classify(&self.encoder, head, vocab, t))
                    .collect::<Result<_, _>>()?;
                Ok(concat_rows(&rows))
            }
        }
    }

    /// Parameters the optimizer updates. The chunked model never touches
    /// the pooler projection in its forward pass, so it is left out there;
    /// the baselines pool through it and train it.
    pub fn trainable(&self) -> Vec<&Parameter<S>> {
        let mut out: Vec<&Parameter<S>> = match &self.head {
            ClassifierHead::Chunked(_) => self
                .encoder
                .parameters()
                .into_iter()
                .filter(|p| p.name() != "encoder.pooler")
                .collect(),
            _ => self.encoder.parameters(),
        };
        out.extend(self.head_parameters());
        out
    }

    fn head_parameters(&self) -> Vec<&Parameter<S>> {
        match &self.head {
            ClassifierHead::Chunked(h) => h.parameters(),
            ClassifierHead::Truncated(h) => h.parameters(),
            ClassifierHead::TwoPass(h) => h.parameters(),
        }
    }

    /// Every parameter in the fixed order used by checkpoints: the full
    /// encoder first, then the head.
    pub fn all_parameters(&self) -> Vec<&Parameter<S>> {
        let mut out = self.encoder.parameters();
        out.extend(self.head_parameters());
        out
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub best_so_far: bool,
}

/// Everything train observed, plus which epoch won.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
}

fn check_labels(
    docs: &[LabeledDocument],
    task: TaskKind,
    num_classes: usize,
) -> Result<(), TrainError> {
    for (index, doc) in docs.iter().enumerate() {
        if !matches!(task, TaskKind::Multilabel) && doc.labels.len() != 1 {
            return Err(TrainError::LabelCount { index, task, count: doc.labels.len() });
        }
        if let Some(&label) = doc.labels.iter().find(|&&l| l >= num_classes) {
            return Err(TrainError::LabelOutOfRange { index, label, num_classes });
        }
    }
    Ok(())
}

fn batch_loss<S: Scalar>(
    model: &Model<S>,
    vocab: &Vocabulary,
    docs: &[&LabeledDocument],
    task: TaskKind,
    max_tokens: usize,
) -> Result<Tensor<S>, TrainError> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let logits = model.batch_logits(vocab, &texts, max_tokens)?;
    let loss = match task {
        TaskKind::Binary | TaskKind::Multiclass => {
            let targets: Vec<usize> = docs.iter().map(|d| d.labels[0]).collect();
            cross_entropy_loss(&logits, &targets)?
        }
        TaskKind::Multilabel => {
            let k = model.num_classes();
            let mut values = vec![S::zero(); docs.len() * k];
            for (row, doc) in docs.iter().enumerate() {
                for &label in &doc.labels {
                    values[row * k + label] = S::one();
                }
            }
            let targets = Tensor::from_vec(&[docs.len(), k], values);
            binary_cross_entropy_loss(&logits, &targets)?
        }
    };
    Ok(loss)
}

/// Runs the finetuning loop and leaves the model holding the parameters of
/// its best development epoch.
pub fn train<S: Scalar>(
    model: &Model<S>,
    vocab: &Vocabulary,
    train_docs: &[LabeledDocument],
    dev_docs: &[LabeledDocument],
    task: TaskKind,
    cfg: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    if train_docs.is_empty() {
        return Err(TrainError::EmptySplit { split: "train" });
    }
    if dev_docs.is_empty() {
        return Err(TrainError::EmptySplit { split: "dev" });
    }
    let classes = model.num_classes();
    check_labels(train_docs, task, classes)?;
    check_labels(dev_docs, task, classes)?;

    let params = model.trainable();
    for p in &params {
        p.zero_grad();
    }
    let mut states: Vec<AdamState<S>> = params
        .iter()
        .map(|p| AdamState::new(p, cfg.learning_rate))
        .collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "shuffle"));

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<S>>)> = None;
    let mut epochs_since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_docs.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (batch, indices) in order.chunks(cfg.batch_size).enumerate() {
            let docs: Vec<&LabeledDocument> = indices.iter().map(|&i| &train_docs[i]).collect();
            let loss = batch_loss(model, vocab, &docs, task, cfg.max_tokens)?;
            let value = loss.item().to_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch, value });
            }
            loss.backward()?;
            for (p, state) in params.iter().zip(states.iter_mut()) {
                adam_step(p, state)?;
            }
            loss_sum += value;
            batches += 1;
        }

        let dev = evaluate(model, vocab, dev_docs, task, cfg.max_tokens, None)?;
        let improved = best.as_ref().map_or(true, |(b, _, _)| dev.metric > *b);
        if improved {
            best = Some((dev.metric, epoch, params.iter().map(|p| p.values()).collect()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_metric: dev.metric,
            best_so_far: improved,
        });
        if epochs_since_best >= cfg.patience {
            break;
        }
    }

    let (best_dev_metric, best_epoch, snapshot) = best.expect("at least one epoch ran");
    for (p, values) in params.iter().zip(&snapshot) {
        p.load_values(values);
    }
    Ok(TrainLog { epochs, best_epoch, best_dev_metric })
}

/// Metric over a document set.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub metric: f64,
    pub metric_name: &'static str,
    pub documents: usize,
}

/// Scores the model on `docs`. With a threshold, only documents whose raw
/// word-token count exceeds it are scored, matching the long-only view of
/// a test set. Documents are scored one at a time, so the result cannot
/// depend on their order or on batch composition.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    vocab: &Vocabulary,
    docs: &[LabeledDocument],
    task: TaskKind,
    max_tokens: usize,
    long_only_threshold: Option<usize>,
) -> Result<Evaluation, TrainError> {
    if docs.is_empty() {
        return Err(TrainError::EmptySplit { split: "evaluation" });
    }
    let selected: Vec<&LabeledDocument> = match long_only_threshold {
        None => docs.iter().collect(),
        Some(threshold) => {
            let kept: Vec<&LabeledDocument> = docs
                .iter()
                .filter(|d| word_tokens(&d.text).len() > threshold)
                .collect();
            if kept.is_empty() {
                return Err(TrainError::EmptyAfterFilter { threshold });
            }
            kept
        }
    };
    check_labels(docs, task, model.num_classes())?;

    no_grad(|| {
        let metric = match task {
            TaskKind::Binary | TaskKind::Multiclass => {
                let mut correct = 0usize;
                for doc in &selected {
                    let logits = model.batch_logits(vocab, &[doc.text.as_str()], max_tokens)?;
                    if argmax(&logits.to_vec()) == doc.labels[0] {
                        correct += 1;
                    }
                }
                correct as f64 / selected.len() as f64
            }
            TaskKind::Multilabel => {
                let mut gold = Vec::with_capacity(selected.len());
                let mut pred = Vec::with_capacity(selected.len());
                for doc in &selected {
                    let logits = model.batch_logits(vocab, &[doc.text.as_str()], max_tokens)?;
                    // sigmoid(z) >= 0.5 exactly when z >= 0.
                    let decided: Vec<usize> = logits
                        .to_vec()
                        .iter()
                        .enumerate()
                        .filter(|(_, &z)| z.to_f64() >= 0.0)
                        .map(|(k, _)| k)
                        .collect();
                    gold.push(doc.labels.clone());
                    pred.push(decided);
                }
                micro_f1(&gold, &pred)?
            }
        };
        Ok(Evaluation {
            metric,
            metric_name: task.metric_name(),
            documents: selected.len(),
        })
    })
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Micro-averaged F1 over pooled (document, label) pairs. All empty on both
/// sides scores 1; no true positives with any error scores 0.
pub fn micro_f1(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64, TrainError> {
    if gold.len() != pred.len() {
        return Err(TrainError::DocumentCountMismatch { gold: gold.len(), pred: pred.len() });
    }
    let mut true_pos = 0u64;
    let mut false_pos = 0u64;
    let mut false_neg = 0u64;
    for (g, p) in gold.iter().zip(pred) {
        let gs: std::collections::HashSet<usize> = g.iter().copied().collect();
        let ps: std::collections::HashSet<usize> = p.iter().copied().collect();
        true_pos += gs.intersection(&ps).count() as u64;
        false_pos += ps.difference(&gs).count() as u64;
        false_neg += gs.difference(&ps).count() as u64;
    }
    if true_pos == 0 {
        return Ok(if false_pos + false_neg == 0 { 1.0 } else { 0.0 });
    }
    Ok(2.0 * true_pos as f64 / (2 * true_pos + false_pos + false_neg) as f64)
}

/// Train/dev/test documents of one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSplits {
    pub train: Vec<LabeledDocument>,
    pub dev: Vec<LabeledDocument>,
    pub test: Vec<LabeledDocument>,
}

/// Long-only slice of an experiment result.
#[derive(Debug, Clone, Serialize)]
pub struct LongOnlyResult {
    pub threshold: usize,
    pub per_run: Vec<f64>,
    pub mean: f64,
}

/// Test metrics over all runs of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub model: ModelKind,
    pub task: TaskKind,
    pub metric_name: &'static str,
    pub runs: usize,
    pub per_run: Vec<f64>,
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_only: Option<LongOnlyResult>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Trains `cfg.runs` models with seeds `cfg.seed + 0 .. cfg.seed + runs-1`
/// and reports each run's test metric plus the mean. The trained models and
/// their logs come back with the result so callers can persist them.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment<S: Scalar>(
    kind: ModelKind,
    encoder_config: &EncoderConfig,
    head_config: &TextCnnConfig,
    mode: ChunkMode,
    vocab: &Vocabulary,
    data: &DataSplits,
    task: TaskKind,
    cfg: &TrainConfig,
    long_only_threshold: Option<usize>,
) -> Result<(ExperimentResult, Vec<(Model<S>, TrainLog)>), TrainError> {
    cfg.validate()?;
    let mut per_run = Vec::with_capacity(cfg.runs);
    let mut long_runs = Vec::with_capacity(cfg.runs);
    let mut trained = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let run_seed = cfg.seed.wrapping_add(run as u64);
        let run_cfg = TrainConfig { seed: run_seed, ..cfg.clone() };
        let model = Model::init(
            kind,
            encoder_config.clone(),
            head_config.clone(),
            cfg.chunk_size,
            mode,
            run_seed,
        )?;
        let log = train(&model, vocab, &data.train, &data.dev, task, &run_cfg)?;
        let result = evaluate(&model, vocab, &data.test, task, cfg.max_tokens, None)?;
        per_run.push(result.metric);
        if let Some(threshold) = long_only_threshold {
            let long = evaluate(&model, vocab, &data.test, task, cfg.max_tokens, Some(threshold))?;
            long_runs.push(long.metric);
        }
        trained.push((model, log));
    }
    let result = ExperimentResult {
        model: kind,
        task,
        metric_name: task.metric_name(),
        runs: cfg.runs,
        per_run: per_run.clone(),
        mean: mean(&per_run),
        long_only: long_only_threshold.map(|threshold| LongOnlyResult {
            threshold,
            per_run: long_runs.clone(),
            mean: mean(&long_runs),
        }),
    };
    Ok((result, trained))
}
