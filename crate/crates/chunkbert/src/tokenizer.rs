//! Whitespace-and-punctuation tokenizer with a frequency-built vocabulary.
//!
//! Text is lowercased and split into alphanumeric runs; every other
//! non-whitespace character becomes its own single-character token. Encoded
//! documents carry exactly one `[CLS]` at the front and one `[SEP]` at the
//! end regardless of length, and batches are padded to the next multiple of
//! the chunk size so the chunking stage never sees a ragged tail.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Fixed low ids, in file order.
pub const RESERVED_TOKENS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("build_vocab: corpus is empty")]
    EmptyCorpus,
    #[error("build_vocab: max_size {0} leaves no room for the {n} reserved tokens", n = RESERVED_TOKENS.len())]
    MaxSizeTooSmall(usize),
    #[error("vocabulary file {path}: line {line} should be {expected:?}, found {found:?}")]
    BadReservedLine {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("vocabulary file {path}: duplicate token {token:?} on line {line}")]
    DuplicateToken {
        path: String,
        line: usize,
        token: String,
    },
    #[error("vocabulary file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("pad_batch_to_chunk_multiple: batch is empty")]
    EmptyBatch,
    #[error("pad_batch_to_chunk_multiple: chunk size must be positive")]
    ZeroChunkSize,
}

/// Splits text into lowercase word and punctuation tokens. Alphanumeric
/// runs stay together; any other non-whitespace character is emitted alone.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token table with the four reserved entries at ids 0 through 3.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            id_to_token: tokens,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Id of a token, or [`UNK_ID`] when out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    /// One token per line, reserved entries first. The exact byte layout is
    /// what the checkpoint fingerprint hashes, so it stays stable.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.id_to_token {
            out.extend_from_slice(t.as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let mut f = fs::File::create(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(&self.to_file_bytes())
            .map_err(|source| TokenizerError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut tokens = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if i < RESERVED_TOKENS.len() && line != RESERVED_TOKENS[i] {
                return Err(TokenizerError::BadReservedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    expected: RESERVED_TOKENS[i].to_string(),
                    found: line.to_string(),
                });
            }
            if seen.insert(line.to_string(), i).is_some() {
                return Err(TokenizerError::DuplicateToken {
                    path: path.display().to_string(),
                    line: i + 1,
                    token: line.to_string(),
                });
            }
            tokens.push(line.to_string());
        }
        if tokens.len() < RESERVED_TOKENS.len() {
            return Err(TokenizerError::BadReservedLine {
                path: path.display().to_string(),
                line: tokens.len() + 1,
                expected: RESERVED_TOKENS[tokens.len().min(3)].to_string(),
                found: String::from("<end of file>"),
            });
        }
        Ok(Vocabulary::from_tokens(tokens))
    }

    /// Encodes a document as `[CLS] tokens [SEP]`, keeping the head of
    /// documents that exceed `max_tokens` (the leading `max_tokens - 2`
    /// word tokens survive, and the single trailing `[SEP]` is always
    /// present). The attention mask is all ones; padding only enters later
    /// at batch time. Segment ids are all zero.
    pub fn tokenize(&self, text: &str, max_tokens: usize) -> TokenizedInput {
        assert!(max_tokens >= 3, "max_tokens must leave room for [CLS] x [SEP]");
        let words = word_tokens(text);
        let budget = max_tokens - 2;
        let mut ids = Vec::with_capacity(words.len().min(budget) + 2);
        ids.push(CLS_ID);
        ids.extend(words.iter().take(budget).map(|w| self.id_or_unk(w)));
        ids.push(SEP_ID);
        TokenizedInput::from_ids(ids)
    }

    /// Joins tokens with single spaces, skipping reserved ids. Feeding the
    /// result back through [`Vocabulary::tokenize`] reproduces the same id
    /// sequence for in-vocabulary text.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if id as usize >= RESERVED_TOKENS.len() {
                parts.push(self.id_to_token[id as usize].as_str());
            }
        }
        parts.join(" ")
    }
}

/// Builds a vocabulary from normalized token frequencies. Tokens need at
/// least `min_freq` occurrences; the most frequent `max_size - 4` survive,
/// with ties broken lexicographically, and ids are assigned in descending
/// frequency order after the reserved entries.
pub fn build_vocab<T: AsRef<str>>(
    corpus: &[T],
    max_size: usize,
    min_freq: u64,
) -> Result<Vocabulary, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    if max_size < RESERVED_TOKENS.len() {
        return Err(TokenizerError::MaxSizeTooSmall(max_size));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for token in word_tokens(doc.as_ref()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - RESERVED_TOKENS.len());

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(tokens))
}

/// One encoded document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    pub token_ids: Vec<u32>,
    /// 1 for real tokens, 0 for padding. Same length as `token_ids`.
    pub attention_mask: Vec<u8>,
    /// All zeros; carried for interface compatibility with two-segment
    /// encoders, never consulted here.
    pub segment_ids: Vec<u8>,
}

impl TokenizedInput {
    pub fn from_ids(token_ids: Vec<u32>) -> Self {
        let n = token_ids.len();
        TokenizedInput {
            token_ids,
            attention_mask: vec![1; n],
            segment_ids: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Row-major unsigned integer matrix for id and mask batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

impl IdMatrix {
    pub fn new(rows: usize, cols: usize, fill: u32) -> Self {
        IdMatrix {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows in IdMatrix::from_rows");
            data.extend_from_slice(row);
        }
        IdMatrix { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u32) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[u32] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Batch of equally padded documents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: IdMatrix,
    pub attention_mask: IdMatrix,
    pub segment_ids: IdMatrix,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.ids.rows()
    }

    pub fn padded_len(&self) -> usize {
        self.ids.cols()
    }
}

/// Pads every document with `[PAD]`/mask-0 entries up to the smallest
/// multiple of `chunk_size` that is at least the longest document (and at
/// least one chunk). Real token prefixes are preserved unchanged.
pub fn pad_batch_to_chunk_multiple(
    batch: &[TokenizedInput],
    chunk_size: usize,
) -> Result<PaddedBatch, TokenizerError> {
    if chunk_size == 0 {
        return Err(TokenizerError::ZeroChunkSize);
    }
    if batch.is_empty() {
        return Err(TokenizerError::EmptyBatch);
    }
    let longest = batch.iter().map(TokenizedInput::len).max().unwrap_or(0);
    let padded = longest.max(1).div_ceil(chunk_size) * chunk_size;

    let mut ids = IdMatrix::new(batch.len(), padded, PAD_ID);
    let mut mask = IdMatrix::new(batch.len(), padded, 0);
    let segments = IdMatrix::new(batch.len(), padded, 0);
    for (r, doc) in batch.iter().enumerate() {
        for (c, &id) in doc.token_ids.iter().enumerate() {
            ids.set(r, c, id);
            mask.set(r, c, u32::from(doc.attention_mask[c]));
        }
    }
    Ok(PaddedBatch {
        ids,
        attention_mask: mask,
        segment_ids: segments,
    })
}
