//! Long-document text classification built on chunked transformer encoding.
//!
//! Documents are padded to a multiple of a fixed chunk size, every chunk is
//! encoded independently by a small transformer encoder, the per-chunk token
//! states are averaged over the last few layers and concatenated back into a
//! single matrix, and a convolutional head with max-over-time pooling turns
//! that matrix into class logits. Peak attention cost is quadratic in the
//! chunk size rather than in the document length.
//!
//! The crate also ships single-window baselines (plain truncation, random
//! token selection, key-sentence selection via PageRank), a training harness
//! with early stopping, and a command line interface covering training,
//! evaluation, inference and attention-memory accounting.
//!
//! Layout:
//!
//! ```text
//! numerics     dense tensors, reverse-mode gradients, Adam, gradient checking
//! tokenizer    vocabulary handling, id sequences, chunk-multiple padding
//! encoder      small transformer encoder with maskable attention
//! chunking     chunk splitting, per-chunk encoding, memory accounting
//! aggregation  convolutional classification head over the chunked matrix
//! baselines    truncation / random / key-sentence two-pass classifiers
//! trainer      models, training loop, metrics, multi-seed experiments
//! cli          command line entry points and checkpoint serialization
//! ```

pub mod numerics;
pub mod tokenizer;
pub mod encoder;
pub mod chunking;
pub mod aggregation;
pub mod baselines;
pub mod trainer;
pub mod cli;

mod util;

pub use numerics::{Parameter, Scalar, Tensor};
