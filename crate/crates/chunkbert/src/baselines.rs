//! Reference classifiers that fit long documents into a bounded encoder
//! window instead of chunking them.
//!
//! Three input reductions are provided. Truncation keeps the head of the
//! document. Random selection keeps a seeded sample of sentences. TextRank
//! scores sentences by running PageRank over a similarity graph and keeps
//! the best ones. The two-pass classifier combines a truncated first read
//! with a selected second read and classifies from the pair of pooled
//! vectors.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

use crate::encoder::{average_last_k_layers, EncoderError, EncoderParams};
use crate::numerics::{concat_cols, Parameter, Scalar, Tensor, TensorError};
use crate::tokenizer::{word_tokens, IdMatrix, TokenizedInput, Vocabulary};
use crate::util::fnv1a64;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NonSquareWeights { rows: usize, cols: usize },
    #[error("edge weight at ({row}, {col}) is negative or non-finite: {value}")]
    BadWeight { row: usize, col: usize, value: f64 },
    #[error("selection budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Splits text into sentences at `.`, `!`, or `?` followed by whitespace or
/// the end of the text. The terminator stays with its sentence. There is no
/// abbreviation handling, so "Dr." ends a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let is_terminator = matches!(chars[i], '.' | '!' | '?');
        let at_boundary = i + 1 == chars.len() || chars[i + 1].is_whitespace();
        if is_terminator && at_boundary {
            let sentence: String = chars[start..=i].iter().collect();
            let trimmed = sentence.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            start = i + 1;
        }
    }
    if start < chars.len() {
        let tail: String = chars[start..].iter().collect();
        let trimmed = tail.trim();
        if !trimmed.is_empty() {
            sentences.push(trimmed.to_string());
        }
    }
    sentences
}

fn content_word_set(sentence: &str) -> HashSet<String> {
    word_tokens(sentence)
        .into_iter()
        .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
        .collect()
}

/// Word-overlap similarity between two sentences, normalized by log length
/// so long sentences do not dominate on raw overlap counts. Empty word sets
/// give zero.
pub fn sentence_similarity(a: &str, b: &str) -> f64 {
    let wa = content_word_set(a);
    let wb = content_word_set(b);
    if wa.is_empty() || wb.is_empty() {
        return 0.0;
    }
    let overlap = wa.intersection(&wb).count() as f64;
    overlap / ((1.0 + wa.len() as f64).ln() + (1.0 + wb.len() as f64).ln())
}

/// Dense pairwise similarity matrix for a document's sentences. The
/// diagonal is zero so a sentence never votes for itself.
pub struct SentenceGraph {
    pub sentences: Vec<String>,
    pub weights: Vec<Vec<f64>>,
}

impl SentenceGraph {
    pub fn build(text: &str) -> Self {
        let sentences = split_sentences(text);
        let n = sentences.len();
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let w = sentence_similarity(&sentences[i], &sentences[j]);
                weights[i][j] = w;
                weights[j][i] = w;
            }
        }
        SentenceGraph { sentences, weights }
    }
}

/// Outcome of the power iteration: one score per node, mean 1.
#[derive(Debug, Clone)]
pub struct PageRankResult {
    pub scores: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Weighted PageRank over a dense non-negative matrix. Each node starts at
/// score 1 and repeatedly receives `(1 - damping)` plus `damping` times the
/// weight-proportional share of its in-neighbors' scores. Nodes without
/// outgoing weight spread their score evenly over the whole graph, which
/// keeps the total equal to the node count. Iteration stops when no score
/// moves more than `tolerance`.
pub fn pagerank(
    weights: &[Vec<f64>],
    damping: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<PageRankResult, BaselineError> {
    let n = weights.len();
    for (row, r) in weights.iter().enumerate() {
        if r.len() != n {
            return Err(BaselineError::NonSquareWeights {
                rows: n,
                cols: r.len(),
            });
        }
        for (col, &value) in r.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(BaselineError::BadWeight { row, col, value });
            }
        }
    }
    if n == 0 {
        return Ok(PageRankResult {
            scores: Vec::new(),
            converged: true,
            iterations: 0,
        });
    }

    let out_weight: Vec<f64> = (0..n).map(|j| weights[j].iter().sum()).collect();
    let mut scores = vec![1.0; n];
    let mut next = vec![0.0; n];
    for iteration in 1..=max_iterations {
        let dangling: f64 = (0..n)
            .filter(|&j| out_weight[j] == 0.0)
            .map(|j| scores[j])
            .sum();
        for (i, slot) in next.iter_mut().enumerate() {
            let mut incoming = dangling / n as f64;
            for j in 0..n {
                if weights[j][i] > 0.0 {
                    incoming += weights[j][i] / out_weight[j] * scores[j];
                }
            }
            *slot = (1.0 - damping) + damping * incoming;
        }
        let delta = scores
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        scores.copy_from_slice(&next);
        if delta <= tolerance {
            return Ok(PageRankResult {
                scores,
                converged: true,
                iterations: iteration,
            });
        }
    }
    Ok(PageRankResult {
        scores,
        converged: false,
        iterations: max_iterations,
    })
}

/// How the second pass picks sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SelectionKind {
    /// Keep the head of the document.
    First,
    /// Keep a uniformly sampled subset of sentences.
    Random { seed: u64 },
    /// Keep the highest-scoring sentences under PageRank.
    TextRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: SelectionKind,
    /// Maximum number of word tokens kept, before the wrapper tokens are
    /// added back.
    pub budget: usize,
}

/// Reduces a document to at most `budget` word tokens, then tokenizes the
/// survivors. Every strategy keeps whatever it picks in original document
/// order.
///
/// Random selection samples word positions without replacement and mixes
/// the document's bytes into the seed, so the choice depends only on the
/// text, never on the position of the document inside a batch or dataset.
/// TextRank adds whole sentences greedily, best score first, skipping any
/// that would overflow the budget.
pub fn select_tokens(
    strategy: &SelectionStrategy,
    vocab: &Vocabulary,
    text: &str,
) -> Result<TokenizedInput, BaselineError> {
    if strategy.budget == 0 {
        return Err(BaselineError::ZeroBudget);
    }
    let max_tokens = strategy.budget + 2;
    match strategy.kind {
        SelectionKind::First => Ok(vocab.tokenize(text, max_tokens)),
        SelectionKind::Random { seed } => {
            let words = word_tokens(text);
            if words.len() <= strategy.budget {
                return Ok(vocab.tokenize(text, max_tokens));
            }
            let mixed = seed ^ fnv1a64(text.as_bytes());
            let mut positions: Vec<usize> = (0..words.len()).collect();
            positions.shuffle(&mut ChaCha8Rng::seed_from_u64(mixed));
            positions.truncate(strategy.budget);
            positions.sort_unstable();
            let sampled: Vec<&str> = positions.iter().map(|&i| words[i].as_str()).collect();
            Ok(vocab.tokenize(&sampled.join(" "), max_tokens))
        }
        SelectionKind::TextRank => {
            let graph = SentenceGraph::build(text);
            let ranked = pagerank(&graph.weights, 0.85, 1e-6, 200)?;
            let costs: Vec<usize> = graph
                .sentences
                .iter()
                .map(|s| word_tokens(s).len())
                .collect();
            let mut order: Vec<usize> = (0..graph.sentences.len()).collect();
            // Highest score first; equal scores fall back to document order.
            order.sort_by(|&a, &b| {
                ranked.scores[b]
                    .partial_cmp(&ranked.scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut kept = vec![false; graph.sentences.len()];
            let mut used = 0;
            for &i in &order {
                if costs[i] == 0 || used + costs[i] > strategy.budget {
                    continue;
                }
                kept[i] = true;
                used += costs[i];
            }
            let selected: Vec<&str> = graph
                .sentences
                .iter()
                .enumerate()
                .filter(|(i, _)| kept[*i])
                .map(|(_, s)| s.as_str())
                .collect();
            Ok(vocab.tokenize(&selected.join(" "), max_tokens))
        }
    }
}

fn single_row_batch(input: &TokenizedInput) -> (IdMatrix, IdMatrix) {
    let ids = IdMatrix::from_rows(&[input.token_ids.clone()]);
    let mask = IdMatrix::from_rows(&[input
        .attention_mask
        .iter()
        .map(|&m| m as u32)
        .collect::<Vec<_>>()]);
    (ids, mask)
}

/// Pooled `[1, d_model]` summary: averaged hidden states at the leading
/// wrapper position, squashed through the pooler projection and tanh.
fn pooled_summary<S: Scalar>(
    encoder: &EncoderParams<S>,
    input: &TokenizedInput,
) -> Result<Tensor<S>, BaselineError> {
    let (ids, mask) = single_row_batch(input);
    let states = encoder.forward(&ids, &mask)?;
    let averaged = average_last_k_layers(&states, encoder.config.average_last_k)?;
    let first = averaged.slice_rows(0, 1);
    Ok(first.matmul(encoder.pooler.tensor())?.tanh())
}

/// Single-pass classifier over a head-truncated document.
pub struct TruncationHead<S: Scalar> {
    pub projection: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> TruncationHead<S> {
    pub fn init(d_model: usize, num_classes: usize, std: f64, rng: &mut impl Rng) -> Self {
        TruncationHead {
            projection: Parameter::normal(
                "truncation.projection",
                &[d_model, num_classes],
                std,
                rng,
            ),
            bias: Parameter::zeros("truncation.bias", &[num_classes]),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        vec![&self.projection, &self.bias]
    }
}

/// Classifies from the head of the document alone. `window` tokens of
/// context at most, including the two wrapper tokens.
pub fn truncation_classify<S: Scalar>(
    encoder: &EncoderParams<S>,
    head: &TruncationHead<S>,
    vocab: &Vocabulary,
    text: &str,
    window: usize,
) -> Result<Tensor<S>, BaselineError> {
    let input = vocab.tokenize(text, window);
    let summary = pooled_summary(encoder, &input)?;
    Ok(summary
        .matmul(head.projection.tensor())?
        .add_row(head.bias.tensor()))
}

/// Classifier over the concatenated summaries of both passes.
pub struct TwoPassHead<S: Scalar> {
    pub strategy: SelectionStrategy,
    pub projection: Parameter<S>,
    pub bias: Parameter<S>,
}

impl<S: Scalar> TwoPassHead<S> {
    pub fn init(
        strategy: SelectionStrategy,
        d_model: usize,
        num_classes: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        TwoPassHead {
            strategy,
            projection: Parameter::normal(
                "twopass.projection",
                &[2 * d_model, num_classes],
                std,
                rng,
            ),
            bias: Parameter::zeros("twopass.bias", &[num_classes]),
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        vec![&self.projection, &self.bias]
    }
}

/// First pass reads the head of the document, second pass reads the
/// selected sentences, and the classifier sees both pooled summaries side
/// by side.
pub fn two_pass_classify<S: Scalar>(
    encoder: &EncoderParams<S>,
    head: &TwoPassHead<S>,
    vocab: &Vocabulary,
    text: &str,
) -> Result<Tensor<S>, BaselineError> {
    let window = encoder.config.max_position.min(512);
    let first_pass = vocab.tokenize(text, window);
    let budget_strategy = SelectionStrategy {
        kind: head.strategy.kind,
        budget: head.strategy.budget.min(window.saturating_sub(2)).max(1),
    };
    let second_pass = select_tokens(&budget_strategy, vocab, text)?;
    let left = pooled_summary(encoder, &first_pass)?;
    let right = pooled_summary(encoder, &second_pass)?;
    let both = concat_cols(&[left, right]);
    Ok(both
        .matmul(head.projection.tensor())?
        .add_row(head.bias.tensor()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::numerics::finite_difference_check;
    use crate::tokenizer::{build_vocab, CLS_ID, SEP_ID};

    #[test]
    fn sentences_split_after_terminators() {
        assert_eq!(
            split_sentences("Dr. Smith went. He left."),
            vec!["Dr.", "Smith went.", "He left."]
        );
        assert_eq!(
            split_sentences("One! Two? Three"),
            vec!["One!", "Two?", "Three"]
        );
        assert_eq!(split_sentences("No terminator"), vec!["No terminator"]);
        assert_eq!(split_sentences(""), Vec::<String>::new());
        assert_eq!(split_sentences("   "), Vec::<String>::new());
        // A period inside a token does not split.
        assert_eq!(split_sentences("see example.com now"), vec!["see example.com now"]);
    }

    #[test]
    fn similarity_matches_hand_computation() {
        // Identical three-word sentences: overlap 3, each set has three
        // words, so the score is 3 / (2 ln 4).
        let s = "alpha beta gamma";
        let expected = 3.0 / (2.0 * 4.0_f64.ln());
        assert!((sentence_similarity(s, s) - expected).abs() < 1e-12);

        // One shared word out of (2, 3): 1 / (ln 3 + ln 4).
        let got = sentence_similarity("alpha beta", "alpha gamma delta");
        let expected = 1.0 / (3.0_f64.ln() + 4.0_f64.ln());
        assert!((got - expected).abs() < 1e-12);

        assert_eq!(sentence_similarity("alpha", "beta"), 0.0);
        assert_eq!(sentence_similarity("", "alpha"), 0.0);
        // Punctuation-only sentences have empty word sets.
        assert_eq!(sentence_similarity("...", "alpha"), 0.0);
        // Repeated words count once.
        let got = sentence_similarity("word word word", "word");
        let expected = 1.0 / (2.0_f64.ln() + 2.0_f64.ln());
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn pagerank_on_a_symmetric_pair_is_uniform() {
        let weights = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let result = pagerank(&weights, 0.85, 1e-9, 200).unwrap();
        assert!(result.converged);
        assert!((result.scores[0] - 1.0).abs() < 1e-6);
        assert!((result.scores[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pagerank_handles_isolated_and_single_nodes() {
        let result = pagerank(&[vec![0.0]], 0.85, 1e-9, 200).unwrap();
        assert!(result.converged);
        assert!((result.scores[0] - 1.0).abs() < 1e-9);

        // Two isolated nodes split the dangling mass evenly.
        let weights = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let result = pagerank(&weights, 0.85, 1e-9, 200).unwrap();
        assert!((result.scores[0] - 1.0).abs() < 1e-6);
        assert!((result.scores[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pagerank_favors_the_middle_of_a_line() {
        let weights = vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
        ];
        let result = pagerank(&weights, 0.85, 1e-9, 500).unwrap();
        assert!(result.converged);
        assert!(result.scores[1] > result.scores[0]);
        assert!(result.scores[1] > result.scores[2]);
        let total: f64 = result.scores.iter().sum();
        assert!((total - 3.0).abs() < 1e-6);
    }

    #[test]
    fn pagerank_ranking_ignores_weight_scale() {
        let base = vec![
            vec![0.0, 0.3, 0.9, 0.0],
            vec![0.3, 0.0, 0.4, 0.1],
            vec![0.9, 0.4, 0.0, 0.2],
            vec![0.0, 0.1, 0.2, 0.0],
        ];
        let scaled: Vec<Vec<f64>> = base
            .iter()
            .map(|row| row.iter().map(|w| w * 37.0).collect())
            .collect();
        let a = pagerank(&base, 0.85, 1e-10, 500).unwrap().scores;
        let b = pagerank(&scaled, 0.85, 1e-10, 500).unwrap().scores;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn pagerank_rejects_bad_inputs() {
        assert!(matches!(
            pagerank(&[vec![0.0, 1.0]], 0.85, 1e-6, 10),
            Err(BaselineError::NonSquareWeights { rows: 1, cols: 2 })
        ));
        assert!(matches!(
            pagerank(&[vec![-1.0]], 0.85, 1e-6, 10),
            Err(BaselineError::BadWeight { row: 0, col: 0, .. })
        ));
        assert!(matches!(
            pagerank(&[vec![f64::NAN]], 0.85, 1e-6, 10),
            Err(BaselineError::BadWeight { .. })
        ));
    }

    fn demo_vocab() -> Vocabulary {
        let corpus = [
            "the cat sat on the mat",
            "dogs chase cats every day",
            "markets fell sharply today",
            "rain is expected tomorrow morning",
        ];
        build_vocab(&corpus, 64, 1).unwrap()
    }

    #[test]
    fn selection_respects_the_budget() {
        let vocab = demo_vocab();
        let text = "The cat sat. Dogs chase cats. Markets fell sharply today. Rain is expected.";
        for kind in [
            SelectionKind::First,
            SelectionKind::Random { seed: 7 },
            SelectionKind::TextRank,
        ] {
            let strategy = SelectionStrategy { kind, budget: 6 };
            let out = select_tokens(&strategy, &vocab, text).unwrap();
            assert!(out.token_ids.len() <= 8, "{kind:?} overflowed: {:?}", out.token_ids);
            assert_eq!(out.token_ids[0], CLS_ID);
            assert_eq!(*out.token_ids.last().unwrap(), SEP_ID);
        }
    }

    #[test]
    fn zero_budget_is_rejected() {
        let vocab = demo_vocab();
        let strategy = SelectionStrategy { kind: SelectionKind::First, budget: 0 };
        assert!(matches!(
            select_tokens(&strategy, &vocab, "anything"),
            Err(BaselineError::ZeroBudget)
        ));
    }

    #[test]
    fn random_selection_keeps_words_in_document_order() {
        // Twelve distinct words; a budget of 5 samples five positions.
        // None of the words is a substring of another, so string positions
        // in the detokenized output reflect token order faithfully.
        let words: Vec<String> = (0..12).map(|i| format!("w{i}x")).collect();
        let text = words.join(" ");
        let vocab = build_vocab(&[text.as_str()], 64, 1).unwrap();
        for seed in 0..8 {
            let strategy = SelectionStrategy { kind: SelectionKind::Random { seed }, budget: 5 };
            let out = select_tokens(&strategy, &vocab, &text).unwrap();
            assert_eq!(out.token_ids.len(), 7, "five words plus the two wrappers");
            let restored = vocab.detokenize(&out.token_ids);
            let indices: Vec<usize> = restored
                .split(' ')
                .map(|w| words.iter().position(|x| x == w).unwrap())
                .collect();
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            assert_eq!(indices, sorted, "selection reordered words: {restored}");
            assert_eq!(indices.len(), 5);
        }
    }

    #[test]
    fn short_documents_pass_through_every_strategy() {
        let text = "cat sat mat. dogs chase cats.";
        let vocab = build_vocab(&[text], 64, 1).unwrap();
        let full = vocab.tokenize(text, 512);
        for kind in [
            SelectionKind::First,
            SelectionKind::Random { seed: 4 },
            SelectionKind::TextRank,
        ] {
            let strategy = SelectionStrategy { kind, budget: 510 };
            let out = select_tokens(&strategy, &vocab, text).unwrap();
            assert_eq!(out.token_ids, full.token_ids, "{kind:?} altered a short doc");
        }
    }

    #[test]
    fn random_selection_is_deterministic_per_text() {
        let vocab = demo_vocab();
        let text = "cat sat mat. dogs chase cats. markets fell today. rain is expected.";
        let strategy = SelectionStrategy { kind: SelectionKind::Random { seed: 11 }, budget: 6 };
        let a = select_tokens(&strategy, &vocab, text).unwrap();
        let b = select_tokens(&strategy, &vocab, text).unwrap();
        assert_eq!(a.token_ids, b.token_ids);

        let other_seed = SelectionStrategy { kind: SelectionKind::Random { seed: 12 }, budget: 6 };
        let c = select_tokens(&other_seed, &vocab, text).unwrap();
        let d = select_tokens(&other_seed, &vocab, text).unwrap();
        assert_eq!(c.token_ids, d.token_ids);
    }

    #[test]
    fn textrank_keeps_the_most_connected_sentence_first() {
        // The middle sentence shares words with both neighbors, the outer
        // two share nothing with each other, so the middle ranks highest.
        // Each sentence costs its word tokens plus the terminator, so the
        // middle one costs 5 and a budget of 5 keeps it and nothing else.
        let text = "cat sat mat. cat mat dogs pivot. dogs day fun.";
        let vocab = build_vocab(&[text], 64, 1).unwrap();
        let strategy = SelectionStrategy { kind: SelectionKind::TextRank, budget: 5 };
        let out = select_tokens(&strategy, &vocab, text).unwrap();
        let words = vocab.detokenize(&out.token_ids);
        assert!(words.contains("pivot"), "kept: {words}");
        assert!(!words.contains("sat"), "kept more than the budget allows: {words}");
        assert!(!words.contains("day"), "kept more than the budget allows: {words}");
    }

    fn tiny_encoder(seed: u64) -> EncoderParams<f64> {
        let cfg = EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 64,
            max_position: 16,
            average_last_k: 2,
        };
        EncoderParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn short_documents_give_identical_passes() {
        // When the whole document fits in the window, pass one and pass two
        // with a First strategy see the same tokens, so the two halves of
        // the concatenated summary are equal.
        let vocab = demo_vocab();
        let enc = tiny_encoder(20);
        let head = TwoPassHead::<f64>::init(
            SelectionStrategy { kind: SelectionKind::First, budget: 14 },
            8,
            2,
            0.02,
            &mut ChaCha8Rng::seed_from_u64(21),
        );
        let text = "the cat sat";
        let first = vocab.tokenize(text, 16);
        let selected = select_tokens(&head.strategy, &vocab, text).unwrap();
        assert_eq!(first.token_ids, selected.token_ids);

        let left = pooled_summary(&enc, &first).unwrap();
        let right = pooled_summary(&enc, &selected).unwrap();
        for (a, b) in left.to_vec().iter().zip(right.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_projection_leaves_only_the_bias() {
        let vocab = demo_vocab();
        let enc = tiny_encoder(22);
        let head = TwoPassHead::<f64>::init(
            SelectionStrategy { kind: SelectionKind::TextRank, budget: 14 },
            8,
            3,
            0.02,
            &mut ChaCha8Rng::seed_from_u64(23),
        );
        head.projection.load_values(&vec![0.0; 16 * 3]);
        head.bias.load_values(&[0.25, -0.5, 1.5]);
        let logits = two_pass_classify(&enc, &head, &vocab, "the cat sat. dogs chase cats.")
            .unwrap();
        assert_eq!(logits.to_vec(), vec![0.25, -0.5, 1.5]);
    }

    #[test]
    fn truncation_reads_only_the_head() {
        let vocab = demo_vocab();
        let enc = tiny_encoder(24);
        let head = TruncationHead::<f64>::init(8, 2, 0.02, &mut ChaCha8Rng::seed_from_u64(25));
        // Documents that agree on their first window tokens classify
        // identically no matter what follows.
        let a = truncation_classify(&enc, &head, &vocab, "the cat sat on the mat", 5).unwrap();
        let b = truncation_classify(
            &enc,
            &head,
            &vocab,
            "the cat sat somewhere else entirely and then rain fell",
            5,
        )
        .unwrap();
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn gradients_flow_through_both_passes() {
        let vocab = demo_vocab();
        let enc = tiny_encoder(26);
        let head = TwoPassHead::<f64>::init(
            SelectionStrategy { kind: SelectionKind::First, budget: 6 },
            8,
            2,
            0.5,
            &mut ChaCha8Rng::seed_from_u64(27),
        );
        let text = "the cat sat on the mat. dogs chase cats every day.";
        let params = head.parameters();
        let report = finite_difference_check(
            || {
                two_pass_classify(&enc, &head, &vocab, text)
                    .unwrap()
                    .sum()
            },
            &params,
            1e-5,
            1e-4,
            4,
            28,
        )
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_relative_error);
    }
}
