//! A small BERT-style encoder: learned token and position embeddings,
//! multi-head self-attention with key masking, GELU feed-forward blocks,
//! and post-sublayer layer normalization.
//!
//! Every batch row is an independent sequence; attention never crosses
//! rows. Position embeddings restart at zero for each row, and
//! [`EncoderParams::forward_masked`] additionally restarts them every
//! `position_period` tokens so a single row can emulate several
//! independently encoded chunks, with an explicit attention pattern
//! controlling which positions may attend to which.

use rand::Rng;
use thiserror::Error;

use crate::numerics::{
    concat_cols, concat_rows, embedding_lookup, BoolMat, Parameter, Scalar, Tensor, TensorError,
};
use crate::tokenizer::IdMatrix;

/// Variance floor of the layer-norm denominators.
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder config: {0}")]
    BadConfig(String),
    #[error("sequence length {len} exceeds max_position {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} out of vocabulary (size {vocab}) at row {row}, column {col}")]
    TokenIdOutOfRange {
        id: u32,
        vocab: usize,
        row: usize,
        col: usize,
    },
    #[error("ids are {ids_rows}x{ids_cols} but attention mask is {mask_rows}x{mask_cols}")]
    MaskShapeMismatch {
        ids_rows: usize,
        ids_cols: usize,
        mask_rows: usize,
        mask_cols: usize,
    },
    #[error("attention pattern is {got_rows}x{got_cols}, expected {want}x{want}")]
    PatternShapeMismatch {
        got_rows: usize,
        got_cols: usize,
        want: usize,
    },
    #[error("average_last_k: k={k} not in 1..={available}")]
    BadLastK { k: usize, available: usize },
    #[error("total length {len} is not a multiple of chunk size {chunk}")]
    LengthNotMultiple { len: usize, chunk: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_position: usize,
    /// How many trailing hidden states (embedding output included) are
    /// averaged into the token representation.
    pub average_last_k: usize,
}

impl EncoderConfig {
    /// Small configuration suitable for CPU experiments: 2 layers, 2 heads,
    /// 32-dimensional states, feed-forward width 4x, and last-k averaging
    /// capped at the number of available states.
    pub fn desk_default(vocab_size: usize, max_position: usize) -> Self {
        let num_layers = 2;
        EncoderConfig {
            num_layers,
            num_heads: 2,
            d_model: 32,
            d_ff: 128,
            vocab_size,
            max_position,
            average_last_k: 5.min(num_layers + 1),
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.num_layers == 0 {
            return Err(EncoderError::BadConfig("num_layers must be positive".into()));
        }
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "d_model {} must be divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.d_model == 0 || self.d_ff == 0 {
            return Err(EncoderError::BadConfig("zero model width".into()));
        }
        if self.vocab_size == 0 {
            return Err(EncoderError::BadConfig("empty vocabulary".into()));
        }
        if self.max_position == 0 {
            return Err(EncoderError::BadConfig("max_position must be positive".into()));
        }
        if self.average_last_k == 0 || self.average_last_k > self.num_layers + 1 {
            return Err(EncoderError::BadConfig(format!(
                "average_last_k {} not in 1..={}",
                self.average_last_k,
                self.num_layers + 1
            )));
        }
        Ok(())
    }
}

/// Weights of one encoder layer.
pub struct LayerParams<S: Scalar> {
    pub wq: Parameter<S>,
    pub bq: Parameter<S>,
    pub wk: Parameter<S>,
    pub bk: Parameter<S>,
    pub wv: Parameter<S>,
    pub bv: Parameter<S>,
    pub wo: Parameter<S>,
    pub bo: Parameter<S>,
    pub attn_norm_gain: Parameter<S>,
    pub attn_norm_bias: Parameter<S>,
    pub ff_w1: Parameter<S>,
    pub ff_b1: Parameter<S>,
    pub ff_w2: Parameter<S>,
    pub ff_b2: Parameter<S>,
    pub ff_norm_gain: Parameter<S>,
    pub ff_norm_bias: Parameter<S>,
}

impl<S: Scalar> LayerParams<S> {
    fn init(index: usize, cfg: &EncoderConfig, std: f64, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let n = |suffix: &str| format!("encoder.layer{index}.{suffix}");
        LayerParams {
            wq: Parameter::normal(&n("wq"), &[d, d], std, rng),
            bq: Parameter::zeros(&n("bq"), &[d]),
            wk: Parameter::normal(&n("wk"), &[d, d], std, rng),
            bk: Parameter::zeros(&n("bk"), &[d]),
            wv: Parameter::normal(&n("wv"), &[d, d], std, rng),
            bv: Parameter::zeros(&n("bv"), &[d]),
            wo: Parameter::normal(&n("wo"), &[d, d], std, rng),
            bo: Parameter::zeros(&n("bo"), &[d]),
            attn_norm_gain: Parameter::ones(&n("attn_norm_gain"), &[d]),
            attn_norm_bias: Parameter::zeros(&n("attn_norm_bias"), &[d]),
            ff_w1: Parameter::normal(&n("ff_w1"), &[d, f], std, rng),
            ff_b1: Parameter::zeros(&n("ff_b1"), &[f]),
            ff_w2: Parameter::normal(&n("ff_w2"), &[f, d], std, rng),
            ff_b2: Parameter::zeros(&n("ff_b2"), &[d]),
            ff_norm_gain: Parameter::ones(&n("ff_norm_gain"), &[d]),
            ff_norm_bias: Parameter::zeros(&n("ff_norm_bias"), &[d]),
        }
    }

    fn parameters(&self) -> Vec<&Parameter<S>> {
        vec![
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.ff_w1,
            &self.ff_b1,
            &self.ff_w2,
            &self.ff_b2,
            &self.ff_norm_gain,
            &self.ff_norm_bias,
        ]
    }
}

/// All encoder weights.
pub struct EncoderParams<S: Scalar> {
    pub config: EncoderConfig,
    pub token_embedding: Parameter<S>,
    pub position_embedding: Parameter<S>,
    pub layers: Vec<LayerParams<S>>,
    /// CLS transform used by single-window classifiers; the chunked model
    /// never touches it.
    pub pooler: Parameter<S>,
}

impl<S: Scalar> EncoderParams<S> {
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self, EncoderError> {
        config.validate()?;
        let std = 0.02;
        let d = config.d_model;
        let token_embedding =
            Parameter::normal("encoder.token_embedding", &[config.vocab_size, d], std, rng);
        let position_embedding = Parameter::normal(
            "encoder.position_embedding",
            &[config.max_position, d],
            std,
            rng,
        );
        let layers = (0..config.num_layers)
            .map(|i| LayerParams::init(i, &config, std, rng))
            .collect();
        let pooler = Parameter::normal("encoder.pooler", &[d, d], std, rng);
        Ok(EncoderParams {
            config,
            token_embedding,
            position_embedding,
            layers,
            pooler,
        })
    }

    /// Every weight in a fixed, documented order: embeddings, then each
    /// layer's attention/norm/feed-forward block, then the pooler. The
    /// checkpoint format serializes tensors in exactly this order.
    pub fn parameters(&self) -> Vec<&Parameter<S>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for layer in &self.layers {
            out.extend(layer.parameters());
        }
        out.push(&self.pooler);
        out
    }

    /// Encodes each batch row as an independent full-attention sequence over
    /// its unmasked keys. Returns all `num_layers + 1` hidden states (the
    /// embedding output first), each flattened to `(rows * seq_len) x
    /// d_model` in row-major (row, position) order.
    pub fn forward(
        &self,
        ids: &IdMatrix,
        attention_mask: &IdMatrix,
    ) -> Result<HiddenStates<S>, EncoderError> {
        let l = ids.cols();
        if l > self.config.max_position {
            return Err(EncoderError::SequenceTooLong {
                len: l,
                max: self.config.max_position,
            });
        }
        self.forward_inner(ids, attention_mask, None, l)
    }

    /// Like [`EncoderParams::forward`], but attention is further restricted
    /// to `pattern` (query row, key column) and position ids are taken
    /// modulo `position_period`. With a block-diagonal pattern this encodes
    /// several chunks of one row exactly as if each were its own sequence.
    pub fn forward_masked(
        &self,
        ids: &IdMatrix,
        attention_mask: &IdMatrix,
        pattern: &BoolMat,
        position_period: usize,
    ) -> Result<HiddenStates<S>, EncoderError> {
        let l = ids.cols();
        if pattern.rows != l || pattern.cols != l {
            return Err(EncoderError::PatternShapeMismatch {
                got_rows: pattern.rows,
                got_cols: pattern.cols,
                want: l,
            });
        }
        if position_period == 0 || position_period > self.config.max_position {
            return Err(EncoderError::SequenceTooLong {
                len: position_period,
                max: self.config.max_position,
            });
        }
        self.forward_inner(ids, attention_mask, Some(pattern), position_period)
    }

    fn forward_inner(
        &self,
        ids: &IdMatrix,
        attention_mask: &IdMatrix,
        pattern: Option<&BoolMat>,
        position_period: usize,
    ) -> Result<HiddenStates<S>, EncoderError> {
        let (r, l) = (ids.rows(), ids.cols());
        if attention_mask.rows() != r || attention_mask.cols() != l {
            return Err(EncoderError::MaskShapeMismatch {
                ids_rows: r,
                ids_cols: l,
                mask_rows: attention_mask.rows(),
                mask_cols: attention_mask.cols(),
            });
        }
        for row in 0..r {
            for col in 0..l {
                let id = ids.get(row, col);
                if id as usize >= self.config.vocab_size {
                    return Err(EncoderError::TokenIdOutOfRange {
                        id,
                        vocab: self.config.vocab_size,
                        row,
                        col,
                    });
                }
            }
        }
        let positions: Vec<u32> = (0..l).map(|i| (i % position_period) as u32).collect();

        // States per layer, one entry per row; concatenated at the end so
        // each layer comes out as a single (r*l) x d tensor.
        let mut collected: Vec<Vec<Tensor<S>>> =
            vec![Vec::with_capacity(r); self.config.num_layers + 1];
        for row in 0..r {
            // Keys an unpadded query may look at: the padding mask restricts
            // columns, the optional pattern restricts (query, key) pairs.
            let key_live: Vec<bool> =
                (0..l).map(|j| attention_mask.get(row, j) != 0).collect();
            let allow = BoolMat::from_fn(l, l, |q, k| {
                key_live[k] && pattern.is_none_or(|p| p.get(q, k))
            });
            let mut x = embedding_lookup(self.token_embedding.tensor(), ids.row(row)).add(
                &embedding_lookup(self.position_embedding.tensor(), &positions),
            );
            collected[0].push(x.clone());
            for (li, layer) in self.layers.iter().enumerate() {
                x = self.layer_forward(layer, &x, &allow)?;
                collected[li + 1].push(x.clone());
            }
        }
        let per_layer = collected
            .into_iter()
            .map(|rows| concat_rows(&rows))
            .collect();
        Ok(HiddenStates {
            per_layer,
            rows: r,
            seq_len: l,
        })
    }

    fn layer_forward(
        &self,
        layer: &LayerParams<S>,
        x: &Tensor<S>,
        allow: &BoolMat,
    ) -> Result<Tensor<S>, EncoderError> {
        let heads = self.config.num_heads;
        let dk = self.config.d_model / heads;
        let q = x.matmul(layer.wq.tensor())?.add_row(layer.bq.tensor());
        let k = x.matmul(layer.wk.tensor())?.add_row(layer.bk.tensor());
        let v = x.matmul(layer.wv.tensor())?.add_row(layer.bv.tensor());
        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (from, to) = (h * dk, (h + 1) * dk);
            let qh = q.slice_cols(from, to);
            let kh = k.slice_cols(from, to);
            let vh = v.slice_cols(from, to);
            let scores = qh
                .matmul(&kh.transpose())?
                .scale(1.0 / (dk as f64).sqrt());
            let attn = scores.softmax_masked(allow)?;
            head_outputs.push(attn.matmul(&vh)?);
        }
        let context = concat_cols(&head_outputs)
            .matmul(layer.wo.tensor())?
            .add_row(layer.bo.tensor());
        let x = x.add(&context).layer_norm(
            layer.attn_norm_gain.tensor(),
            layer.attn_norm_bias.tensor(),
            LAYER_NORM_EPS,
        )?;
        let ff = x
            .matmul(layer.ff_w1.tensor())?
            .add_row(layer.ff_b1.tensor())
            .gelu()
            .matmul(layer.ff_w2.tensor())?
            .add_row(layer.ff_b2.tensor());
        Ok(x.add(&ff).layer_norm(
            layer.ff_norm_gain.tensor(),
            layer.ff_norm_bias.tensor(),
            LAYER_NORM_EPS,
        )?)
    }
}

/// All hidden states of one forward pass, embedding output first.
pub struct HiddenStates<S: Scalar> {
    /// `num_layers + 1` tensors, each `(rows * seq_len) x d_model`.
    pub per_layer: Vec<Tensor<S>>,
    pub rows: usize,
    pub seq_len: usize,
}

/// Mean of the last `k` hidden states, the token representation consumed by
/// the chunked classifier.
pub fn average_last_k_layers<S: Scalar>(
    states: &HiddenStates<S>,
    k: usize,
) -> Result<Tensor<S>, EncoderError> {
    let available = states.per_layer.len();
    if k == 0 || k > available {
        return Err(EncoderError::BadLastK { k, available });
    }
    let mut acc = states.per_layer[available - k].clone();
    for layer in &states.per_layer[available - k + 1..] {
        acc = acc.add(layer);
    }
    Ok(acc.scale(1.0 / k as f64))
}

/// True where query `i` and key `j` fall in the same `chunk_size` block.
/// The total length must be a whole number of chunks.
pub fn build_block_diagonal_mask(
    total_len: usize,
    chunk_size: usize,
) -> Result<BoolMat, EncoderError> {
    if chunk_size == 0 || total_len % chunk_size != 0 {
        return Err(EncoderError::LengthNotMultiple {
            len: total_len,
            chunk: chunk_size,
        });
    }
    Ok(BoolMat::from_fn(total_len, total_len, |i, j| {
        i / chunk_size == j / chunk_size
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(vocab: usize, max_pos: usize, seed: u64) -> EncoderParams<f64> {
        let cfg = EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab,
            max_position: max_pos,
            average_last_k: 3,
        };
        EncoderParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn ones_mask(rows: usize, cols: usize) -> IdMatrix {
        IdMatrix::new(rows, cols, 1)
    }

    #[test]
    fn forward_produces_one_state_per_layer_plus_embeddings() {
        let p = tiny_params(10, 8, 1);
        let ids = IdMatrix::from_rows(&[vec![1, 2]]);
        let hs = p.forward(&ids, &ones_mask(1, 2)).unwrap();
        assert_eq!(hs.per_layer.len(), 3);
        for state in &hs.per_layer {
            assert_eq!(state.shape(), [2, 8]);
        }
    }

    #[test]
    fn masked_keys_do_not_influence_other_positions() {
        let p = tiny_params(10, 8, 2);
        let mask = IdMatrix::from_rows(&[vec![1, 0]]);
        let a = p
            .forward(&IdMatrix::from_rows(&[vec![4, 5]]), &mask)
            .unwrap();
        let b = p
            .forward(&IdMatrix::from_rows(&[vec![4, 9]]), &mask)
            .unwrap();
        let last_a = a.per_layer.last().unwrap();
        let last_b = b.per_layer.last().unwrap();
        for j in 0..8 {
            assert_eq!(
                last_a.get2(0, j).to_bits(),
                last_b.get2(0, j).to_bits(),
                "position 0 must ignore the masked second token"
            );
        }
    }

    #[test]
    fn batch_rows_are_independent_and_equivariant() {
        let p = tiny_params(12, 8, 3);
        let mask = ones_mask(2, 3);
        let ab = p
            .forward(&IdMatrix::from_rows(&[vec![1, 2, 3], vec![7, 8, 9]]), &mask)
            .unwrap();
        let ba = p
            .forward(&IdMatrix::from_rows(&[vec![7, 8, 9], vec![1, 2, 3]]), &mask)
            .unwrap();
        let last_ab = ab.per_layer.last().unwrap();
        let last_ba = ba.per_layer.last().unwrap();
        for pos in 0..3 {
            for j in 0..8 {
                assert_eq!(last_ab.get2(pos, j), last_ba.get2(3 + pos, j));
                assert_eq!(last_ab.get2(3 + pos, j), last_ba.get2(pos, j));
            }
        }
    }

    #[test]
    fn identical_rows_encode_identically() {
        let p = tiny_params(12, 8, 4);
        let hs = p
            .forward(
                &IdMatrix::from_rows(&[vec![5, 6, 7], vec![5, 6, 7]]),
                &ones_mask(2, 3),
            )
            .unwrap();
        let last = hs.per_layer.last().unwrap();
        for pos in 0..3 {
            for j in 0..8 {
                assert_eq!(last.get2(pos, j), last.get2(3 + pos, j));
            }
        }
    }

    #[test]
    fn rejects_sequences_longer_than_max_position() {
        let p = tiny_params(10, 2, 5);
        let ids = IdMatrix::from_rows(&[vec![1, 2, 3]]);
        assert!(matches!(
            p.forward(&ids, &ones_mask(1, 3)),
            Err(EncoderError::SequenceTooLong { len: 3, max: 2 })
        ));
    }

    #[test]
    fn rejects_out_of_vocabulary_ids() {
        let p = tiny_params(10, 8, 6);
        let ids = IdMatrix::from_rows(&[vec![1, 10]]);
        assert!(matches!(
            p.forward(&ids, &ones_mask(1, 2)),
            Err(EncoderError::TokenIdOutOfRange { id: 10, col: 1, .. })
        ));
    }

    #[test]
    fn block_mask_allows_exactly_same_chunk_pairs() {
        let m = build_block_diagonal_mask(4, 2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), i / 2 == j / 2, "at ({i}, {j})");
            }
        }
    }

    #[test]
    fn block_mask_rejects_ragged_lengths() {
        assert!(matches!(
            build_block_diagonal_mask(5, 2),
            Err(EncoderError::LengthNotMultiple { len: 5, chunk: 2 })
        ));
        assert!(build_block_diagonal_mask(6, 0).is_err());
    }

    #[test]
    fn averaging_constant_states_gives_their_mean() {
        let states = HiddenStates::<f64> {
            per_layer: (1..=6)
                .map(|v| Tensor::full(&[2, 3], f64::from(v)))
                .collect(),
            rows: 1,
            seq_len: 2,
        };
        let avg = average_last_k_layers(&states, 5).unwrap();
        for v in avg.to_vec() {
            assert!((v - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_rejects_out_of_range_k() {
        let states = HiddenStates::<f64> {
            per_layer: vec![Tensor::zeros(&[1, 2]); 3],
            rows: 1,
            seq_len: 1,
        };
        assert!(matches!(
            average_last_k_layers(&states, 0),
            Err(EncoderError::BadLastK { k: 0, available: 3 })
        ));
        assert!(matches!(
            average_last_k_layers(&states, 4),
            Err(EncoderError::BadLastK { k: 4, available: 3 })
        ));
    }

    #[test]
    fn block_pattern_with_periodic_positions_matches_separate_chunks() {
        let p = tiny_params(16, 4, 7);
        let chunk_a = vec![3, 4, 5, 6];
        let chunk_b = vec![9, 10, 11, 12];
        let joined: Vec<u32> = chunk_a.iter().chain(&chunk_b).copied().collect();

        let pattern = build_block_diagonal_mask(8, 4).unwrap();
        let fused = p
            .forward_masked(
                &IdMatrix::from_rows(&[joined]),
                &ones_mask(1, 8),
                &pattern,
                4,
            )
            .unwrap();
        let split = p
            .forward(
                &IdMatrix::from_rows(&[chunk_a, chunk_b]),
                &ones_mask(2, 4),
            )
            .unwrap();
        for layer in 0..fused.per_layer.len() {
            let f = fused.per_layer[layer].to_vec();
            let s = split.per_layer[layer].to_vec();
            assert_eq!(f.len(), s.len());
            for i in 0..f.len() {
                assert!(
                    (f[i] - s[i]).abs() < 1e-10,
                    "layer {layer} element {i}: {} vs {}",
                    f[i],
                    s[i]
                );
            }
        }
    }

    #[test]
    fn desk_default_config_is_valid() {
        let cfg = EncoderConfig::desk_default(100, 128);
        cfg.validate().unwrap();
        assert_eq!(cfg.average_last_k, 3);
        assert_eq!(cfg.d_ff, 4 * cfg.d_model);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = EncoderConfig::desk_default(100, 128);
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err(), "d_model not divisible by heads");
        let mut cfg = EncoderConfig::desk_default(100, 128);
        cfg.average_last_k = 4;
        assert!(cfg.validate().is_err(), "k beyond available states");
    }
}
