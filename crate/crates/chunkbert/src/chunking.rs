//! Splitting padded batches into fixed-size chunks, encoding the chunks
//! independently, and reassembling per-document embedding matrices.
//!
//! Both embedding paths produce the same numbers. The sequential path runs
//! one encoder call per (document, chunk) and never materializes an
//! attention matrix larger than `C x C`. The vectorized path folds all
//! chunks into the batch dimension and runs a single encoder call whose
//! attention work is `n` matrices of `C x C` entries live at once, the
//! layout a batched implementation would choose. [`memory_report`] does the
//! corresponding accounting without allocating anything.

use serde::Serialize;
use thiserror::Error;

use crate::encoder::{average_last_k_layers, EncoderError, EncoderParams};
use crate::numerics::{concat_rows, Scalar, Tensor};
use crate::tokenizer::{IdMatrix, PaddedBatch};

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("chunk size must be positive")]
    ZeroChunkSize,
    #[error("length {len} is not divisible by chunk size {chunk}")]
    NotDivisible { len: usize, chunk: usize },
    #[error("cannot concatenate zero chunks")]
    NoChunks,
    #[error("chunk {index} is {got} wide, expected {want}")]
    WidthMismatch { index: usize, got: usize, want: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// How a document of `total_len` tokens divides into chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    pub total_len: usize,
    pub chunk_size: usize,
    pub num_chunks: usize,
}

impl ChunkLayout {
    pub fn new(total_len: usize, chunk_size: usize) -> Result<Self, ChunkError> {
        if chunk_size == 0 {
            return Err(ChunkError::ZeroChunkSize);
        }
        if total_len == 0 || total_len % chunk_size != 0 {
            return Err(ChunkError::NotDivisible {
                len: total_len,
                chunk: chunk_size,
            });
        }
        Ok(ChunkLayout {
            total_len,
            chunk_size,
            num_chunks: total_len / chunk_size,
        })
    }
}

/// Which arrangement the encoder runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkMode {
    Sequential,
    Vectorized,
}

impl std::fmt::Display for ChunkMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChunkMode::Sequential => "sequential",
            ChunkMode::Vectorized => "vectorized",
        })
    }
}

/// Reshapes a `B x T` matrix into `(n*B) x C` with the chunk index as the
/// outer dimension: output rows `k*B .. (k+1)*B` hold chunk `k` (columns
/// `k*C .. (k+1)*C`) of every batch row, in original batch order.
pub fn split_into_chunks(batch: &IdMatrix, chunk_size: usize) -> Result<IdMatrix, ChunkError> {
    let layout = ChunkLayout::new(batch.cols(), chunk_size)?;
    let b = batch.rows();
    let mut out = IdMatrix::new(layout.num_chunks * b, chunk_size, 0);
    for k in 0..layout.num_chunks {
        for row in 0..b {
            for c in 0..chunk_size {
                out.set(k * b + row, c, batch.get(row, k * chunk_size + c));
            }
        }
    }
    Ok(out)
}

/// Embedding matrix of one document after chunked encoding.
pub struct ChunkEmbedding<S: Scalar> {
    /// `total_len x d_model`; rows whose mask is zero are exact zeros.
    pub matrix: Tensor<S>,
    /// 1 for real tokens, 0 for padding, length `total_len`.
    pub padding_mask: Vec<u8>,
    pub layout: ChunkLayout,
}

/// Stacks per-chunk `C x d` matrices in chunk order into `T x d`.
pub fn concat_chunk_embeddings<S: Scalar>(chunks: &[Tensor<S>]) -> Result<Tensor<S>, ChunkError> {
    if chunks.is_empty() {
        return Err(ChunkError::NoChunks);
    }
    let want = chunks[0].cols();
    for (index, c) in chunks.iter().enumerate() {
        if c.cols() != want {
            return Err(ChunkError::WidthMismatch {
                index,
                got: c.cols(),
                want,
            });
        }
    }
    Ok(concat_rows(chunks))
}

/// Encodes every chunk of every document with its own encoder call.
pub fn sequential_chunk_embed<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &PaddedBatch,
    chunk_size: usize,
) -> Result<Vec<ChunkEmbedding<S>>, ChunkError> {
    let layout = ChunkLayout::new(batch.padded_len(), chunk_size)?;
    let k = params.config.average_last_k;
    let mut out = Vec::with_capacity(batch.batch_size());
    for row in 0..batch.batch_size() {
        let mut chunks = Vec::with_capacity(layout.num_chunks);
        for chunk in 0..layout.num_chunks {
            let span = chunk * chunk_size..(chunk + 1) * chunk_size;
            let ids = IdMatrix::from_rows(&[batch.ids.row(row)[span.clone()].to_vec()]);
            let mask =
                IdMatrix::from_rows(&[batch.attention_mask.row(row)[span.clone()].to_vec()]);
            let states = params.forward(&ids, &mask)?;
            let averaged = average_last_k_layers(&states, k)?;
            let keep: Vec<bool> = batch.attention_mask.row(row)[span]
                .iter()
                .map(|&m| m != 0)
                .collect();
            chunks.push(averaged.zero_rows(&keep));
        }
        out.push(ChunkEmbedding {
            matrix: concat_chunk_embeddings(&chunks)?,
            padding_mask: batch
                .attention_mask
                .row(row)
                .iter()
                .map(|&m| m as u8)
                .collect(),
            layout,
        });
    }
    Ok(out)
}

/// Encodes all chunks of all documents in one encoder call by moving the
/// chunk index into the batch dimension, then routes each document's chunk
/// rows back into a contiguous `T x d` matrix.
pub fn vectorized_chunk_embed<S: Scalar>(
    params: &EncoderParams<S>,
    batch: &PaddedBatch,
    chunk_size: usize,
) -> Result<Vec<ChunkEmbedding<S>>, ChunkError> {
    let layout = ChunkLayout::new(batch.padded_len(), chunk_size)?;
    let b = batch.batch_size();
    let ids = split_into_chunks(&batch.ids, chunk_size)?;
    let mask = split_into_chunks(&batch.attention_mask, chunk_size)?;
    let states = params.forward(&ids, &mask)?;
    let averaged = average_last_k_layers(&states, params.config.average_last_k)?;

    let mut out = Vec::with_capacity(b);
    for row in 0..b {
        let parts: Vec<Tensor<S>> = (0..layout.num_chunks)
            .map(|k| {
                let start = (k * b + row) * chunk_size;
                averaged.slice_rows(start, start + chunk_size)
            })
            .collect();
        let padding_mask: Vec<u8> = batch
            .attention_mask
            .row(row)
            .iter()
            .map(|&m| m as u8)
            .collect();
        let keep: Vec<bool> = padding_mask.iter().map(|&m| m != 0).collect();
        out.push(ChunkEmbedding {
            matrix: concat_chunk_embeddings(&parts)?.zero_rows(&keep),
            padding_mask,
            layout,
        });
    }
    Ok(out)
}

/// Encoder arrangement for attention accounting, including the full
/// unchunked reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    Sequential,
    Vectorized,
    Full,
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MemoryMode::Sequential => "sequential",
            MemoryMode::Vectorized => "vectorized",
            MemoryMode::Full => "full",
        })
    }
}

/// Peak live attention-matrix entries for one document of `total_len`
/// tokens, per head.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryReport {
    pub total_len: usize,
    pub chunk_size: usize,
    pub mode: MemoryMode,
    pub attention_entries: u64,
    /// Entries relative to a full-attention window of 512 tokens.
    pub ratio_vs_full_512: f64,
    /// Entries relative to full attention over the same `total_len`.
    #[serde(rename = "ratio_vs_full_T")]
    pub ratio_vs_full_t: f64,
}

/// Counts live attention entries: full keeps `T^2`, the vectorized chunk
/// arrangement keeps all `n` chunk matrices (`n * C^2`), and the sequential
/// arrangement only ever holds one (`C^2`).
pub fn memory_report(
    total_len: usize,
    chunk_size: usize,
    mode: MemoryMode,
) -> Result<MemoryReport, ChunkError> {
    let layout = ChunkLayout::new(total_len, chunk_size)?;
    let c = chunk_size as u64;
    let t = total_len as u64;
    let attention_entries = match mode {
        MemoryMode::Full => t * t,
        MemoryMode::Vectorized => layout.num_chunks as u64 * c * c,
        MemoryMode::Sequential => c * c,
    };
    Ok(MemoryReport {
        total_len,
        chunk_size,
        mode,
        attention_entries,
        ratio_vs_full_512: attention_entries as f64 / (512.0 * 512.0),
        ratio_vs_full_t: attention_entries as f64 / (t * t) as f64,
    })
}
