//! Convolutional aggregation head.
//!
//! The encoder hands over a `T x d` matrix per document. This head slides
//! one-dimensional filters of a few window widths over the rows, takes the
//! maximum activation of each filter across all positions, concatenates the
//! maxima into a fixed-length feature vector, and projects that vector to
//! class logits. Document length only changes how many positions each
//! filter sees, never the feature width, so arbitrarily long inputs reduce
//! to the same classifier geometry.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunking::{sequential_chunk_embed, vectorized_chunk_embed, ChunkError, ChunkMode};
use crate::encoder::EncoderParams;
use crate::numerics::{concat_rows, concat_scalars, Parameter, Scalar, Tensor, TensorError};
use crate::tokenizer::PaddedBatch;

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("window sizes must be non-empty")]
    NoWindows,
    #[error("window size {0} must be positive")]
    ZeroWindow(usize),
    #[error("filters per window must be positive")]
    ZeroFilters,
    #[error("need at least one class")]
    ZeroClasses,
    #[error("dropout probability {0} is outside [0, 1)")]
    BadDropout(f64),
    #[error("chunk size {chunk} is shorter than the widest window {window}")]
    ChunkTooNarrow { chunk: usize, window: usize },
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Shape of the convolutional head.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TextCnnConfig {
    pub window_sizes: Vec<usize>,
    pub filters_per_window: usize,
    pub num_classes: usize,
    /// Probability of dropping a feature during training. `None` disables
    /// dropout entirely.
    #[serde(default)]
    pub dropout: Option<f64>,
}

impl TextCnnConfig {
    pub fn new(num_classes: usize) -> Self {
        TextCnnConfig {
            window_sizes: vec![3, 4, 5],
            filters_per_window: 100,
            num_classes,
            dropout: None,
        }
    }

    /// Width of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        self.window_sizes.len() * self.filters_per_window
    }

    pub fn max_window(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        if self.window_sizes.is_empty() {
            return Err(AggregationError::NoWindows);
        }
        if let Some(&w) = self.window_sizes.iter().find(|&&w| w == 0) {
            return Err(AggregationError::ZeroWindow(w));
        }
        if self.filters_per_window == 0 {
            return Err(AggregationError::ZeroFilters);
        }
        if self.num_classes == 0 {
            return Err(AggregationError::ZeroClasses);
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) || !p.is_finite() {
                return Err(AggregationError::BadDropout(p));
            }
        }
        Ok(())
    }
}

/// Filters and the final projection, all trainable.
pub struct TextCnnParams<S: Scalar> {
    pub config: TextCnnConfig,
    /// `kernels[i][j]` is filter `j` for window size `window_sizes[i]`,
    /// shaped `[w, d_model]`.
    pub kernels: Vec<Vec<Parameter<S>>>,
    /// One scalar bias per kernel, same indexing.
    pub biases: Vec<Vec<Parameter<S>>>,
    /// `[feature_dim, num_classes]`.
    pub projection: Parameter<S>,
    /// `[num_classes]`.
    pub projection_bias: Parameter<S>,
}

impl<S: Scalar> TextCnnParams<S> {
    /// Kernels are drawn with fan-in scaling, `sqrt(2 / (w * d_model))`, so
    /// pre-activations start near unit scale regardless of window size.
    /// `projection_std` sets the spread of the final projection.
    pub fn init(
        config: TextCnnConfig,
        d_model: usize,
        projection_std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, AggregationError> {
        config.validate()?;
        let mut kernels = Vec::with_capacity(config.window_sizes.len());
        let mut biases = Vec::with_capacity(config.window_sizes.len());
        for (i, &w) in config.window_sizes.iter().enumerate() {
            let kernel_std = (2.0 / (w * d_model) as f64).sqrt();
            let mut ks = Vec::with_capacity(config.filters_per_window);
            let mut bs = Vec::with_capacity(config.filters_per_window);
            for j in 0..config.filters_per_window {
                ks.push(Parameter::normal(
                    &format!("head.window{i}.filter{j}.kernel"),
                    &[w, d_model],
                    kernel_std,
                    rng,
                ));
                bs.push(Parameter::zeros(
                    &format!("head.window{i}.filter{j}.bias"),
                    &[1],
                ));
            }
            kernels.push(ks);
            biases.push(bs);
        }
        let projection = Parameter::normal(
            "head.projection",
            &[config.feature_dim(), config.num_classes],
            projection_std,
            rng,
        );
        let projection_bias = Parameter::zeros("head.projection_bias", &[config.num_classes]);
        Ok(TextCnnParams {
            config,
            kernels,
            biases,
            projection,
            projection_bias,
        })
    }

    /// All parameters in a fixed order: kernels and biases interleaved per
    /// filter, window-major, then the projection and its bias.
    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut out = Vec::new();
        for (ks, bs) in self.kernels.iter().zip(&self.biases) {
            for (k, b) in ks.iter().zip(bs) {
                out.push(k);
                out.push(b);
            }
        }
        out.push(&self.projection);
        out.push(&self.projection_bias);
        out
    }
}

/// Pooled feature vector and the logits projected from it.
pub struct HeadOutput<S: Scalar> {
    /// `[1, feature_dim]`, ordered window-major then filter index.
    pub feature: Tensor<S>,
    /// `[1, num_classes]`.
    pub logits: Tensor<S>,
}

/// Runs the convolutional head over one `T x d` embedding matrix.
///
/// When `dropout_rng` is given and the config enables dropout, surviving
/// features are scaled by `1/(1-p)` so the expected activation matches
/// inference, which never drops anything.
pub fn textcnn_forward<S: Scalar>(
    params: &TextCnnParams<S>,
    input: &Tensor<S>,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<HeadOutput<S>, AggregationError> {
    let mut pooled = Vec::with_capacity(params.config.feature_dim());
    for (ks, bs) in params.kernels.iter().zip(&params.biases) {
        for (k, b) in ks.iter().zip(bs) {
            let activations = input.conv1d_valid(k.tensor(), b.tensor())?.relu();
            let (max, _) = activations.max_over_time()?;
            pooled.push(max);
        }
    }
    let mut feature = concat_scalars(&pooled).reshape(&[1, params.config.feature_dim()]);
    if let (Some(p), Some(rng)) = (params.config.dropout, dropout_rng) {
        if p > 0.0 {
            let scale = S::from_f64(1.0 / (1.0 - p));
            let mask: Vec<S> = (0..params.config.feature_dim())
                .map(|_| if rng.gen::<f64>() >= p { scale } else { S::zero() })
                .collect();
            feature = feature.mul(&Tensor::from_vec(
                &[1, params.config.feature_dim()],
                mask,
            ));
        }
    }
    let logits = feature
        .matmul(params.projection.tensor())?
        .add_row(params.projection_bias.tensor());
    Ok(HeadOutput { feature, logits })
}

/// Full classification pass: chunked encoding then the convolutional head,
/// one row of logits per document.
pub fn classify<S: Scalar>(
    encoder: &EncoderParams<S>,
    head: &TextCnnParams<S>,
    batch: &PaddedBatch,
    chunk_size: usize,
    mode: ChunkMode,
) -> Result<Tensor<S>, AggregationError> {
    if chunk_size < head.config.max_window() {
        return Err(AggregationError::ChunkTooNarrow {
            chunk: chunk_size,
            window: head.config.max_window(),
        });
    }
    let embeddings = match mode {
        ChunkMode::Sequential => sequential_chunk_embed(encoder, batch, chunk_size)?,
        ChunkMode::Vectorized => vectorized_chunk_embed(encoder, batch, chunk_size)?,
    };
    let rows: Vec<Tensor<S>> = embeddings
        .iter()
        .map(|e| textcnn_forward(head, &e.matrix, None).map(|o| o.logits))
        .collect::<Result<_, _>>()?;
    Ok(concat_rows(&rows))
}
