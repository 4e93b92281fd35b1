//! Acceptance checks for the chunked-classification pipeline.
//!
//! Each test verifies one end-to-end contract and prints a single
//! `acceptance NN <name>: PASS` or `... FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`). Tolerances and time
//! budgets are pinned next to the assertions they guard.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chunkbert::aggregation::{textcnn_forward, TextCnnConfig, TextCnnParams};
use chunkbert::baselines::{pagerank, select_tokens, SelectionKind, SelectionStrategy};
use chunkbert::chunking::{
    memory_report, sequential_chunk_embed, vectorized_chunk_embed, ChunkMode, MemoryMode,
};
use chunkbert::encoder::{
    average_last_k_layers, build_block_diagonal_mask, EncoderConfig, EncoderParams,
};
use chunkbert::numerics::{cross_entropy_loss, finite_difference_check, Tensor};
use chunkbert::tokenizer::{build_vocab, pad_batch_to_chunk_multiple, IdMatrix, TokenizedInput};
use chunkbert::trainer::{
    evaluate, micro_f1, run_experiment, DataSplits, LabeledDocument, Model, ModelKind, TaskKind,
    TrainConfig,
};

fn report(name: &str, body: impl FnOnce() -> Result<(), String>) {
    match body() {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(msg) => {
            println!("acceptance {name}: FAIL ({msg})");
            panic!("acceptance {name}: {msg}");
        }
    }
}

/// Random encoder whose width, depth and head count come from `rng`.
fn random_encoder(rng: &mut ChaCha8Rng, chunk_size: usize) -> EncoderParams<f32> {
    let (d_model, num_heads) = *[(4, 1), (4, 2), (8, 2), (16, 4), (32, 4)]
        .iter()
        .nth(rng.gen_range(0..5))
        .unwrap();
    let num_layers = rng.gen_range(1..=2);
    let config = EncoderConfig {
        num_layers,
        num_heads,
        d_model,
        d_ff: d_model * 2,
        vocab_size: 32,
        max_position: chunk_size,
        average_last_k: rng.gen_range(1..=num_layers + 1),
    };
    EncoderParams::init(config, rng).unwrap()
}

/// Batch of `batch_size` documents with random live lengths, padded to a
/// multiple of `chunk_size`.
fn random_batch(
    rng: &mut ChaCha8Rng,
    batch_size: usize,
    max_chunks: usize,
    chunk_size: usize,
) -> chunkbert::tokenizer::PaddedBatch {
    let docs: Vec<TokenizedInput> = (0..batch_size)
        .map(|_| {
            let len = rng.gen_range(1..=max_chunks * chunk_size);
            TokenizedInput::from_ids((0..len).map(|_| rng.gen_range(0..32u32)).collect())
        })
        .collect();
    pad_batch_to_chunk_multiple(&docs, chunk_size).unwrap()
}

#[test]
fn chunked_encodings_agree_across_strategies() {
    report("01 sequential-vs-vectorized", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let cases = 54;
        for case in 0..cases {
            let chunk_size = [2, 4, 8][case % 3];
            let encoder = random_encoder(&mut rng, chunk_size);
            let batch_size = rng.gen_range(1..=4);
            let batch = random_batch(&mut rng, batch_size, 8, chunk_size);

            let seq = sequential_chunk_embed(&encoder, &batch, chunk_size)
                .map_err(|e| format!("case {case}: {e}"))?;
            let vec = vectorized_chunk_embed(&encoder, &batch, chunk_size)
                .map_err(|e| format!("case {case}: {e}"))?;
            for (doc, (s, v)) in seq.iter().zip(&vec).enumerate() {
                let a = s.matrix.to_vec();
                let b = v.matrix.to_vec();
                if a.len() != b.len() {
                    return Err(format!("case {case} doc {doc}: shape mismatch"));
                }
                for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                    if (x - y).abs() > 1e-5 {
                        return Err(format!(
                            "case {case} doc {doc} entry {i}: {x} vs {y} beyond 1e-5"
                        ));
                    }
                }
                if s.padding_mask != v.padding_mask {
                    return Err(format!("case {case} doc {doc}: padding masks differ"));
                }
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs() >= 60 {
            return Err(format!("{cases} cases took {elapsed:?}, budget is 60 s"));
        }
        Ok(())
    });
}

#[test]
fn perturbations_stay_inside_their_chunk() {
    report("02 chunk-locality", || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for case in 0..22 {
            let chunk_size = [2, 4, 8][case % 3];
            let encoder = random_encoder(&mut rng, chunk_size);
            let batch_size = rng.gen_range(1..=3);
            let batch = random_batch(&mut rng, batch_size, 6, chunk_size);

            let before = vectorized_chunk_embed(&encoder, &batch, chunk_size)
                .map_err(|e| format!("case {case}: {e}"))?;

            // Flip one live token to a different id.
            let doc = rng.gen_range(0..batch_size);
            let live: Vec<usize> = (0..batch.padded_len())
                .filter(|&p| batch.attention_mask.get(doc, p) == 1)
                .collect();
            let pos = live[rng.gen_range(0..live.len())];
            let old = batch.ids.get(doc, pos);
            let new = (old + 1 + rng.gen_range(0..30)) % 32;
            let mut edited = batch.clone();
            edited.ids.set(doc, pos, new);

            let after = vectorized_chunk_embed(&encoder, &edited, chunk_size)
                .map_err(|e| format!("case {case}: {e}"))?;

            let d = encoder.config.d_model;
            let hit_chunk = pos / chunk_size;
            let mut changed_inside = false;
            for row_doc in 0..batch_size {
                let a = before[row_doc].matrix.to_vec();
                let b = after[row_doc].matrix.to_vec();
                for row in 0..batch.padded_len() {
                    let same_chunk =
                        row_doc == doc && row / chunk_size == hit_chunk;
                    for col in 0..d {
                        let (x, y) = (a[row * d + col], b[row * d + col]);
                        if same_chunk {
                            changed_inside |= x.to_bits() != y.to_bits();
                        } else if x.to_bits() != y.to_bits() {
                            return Err(format!(
                                "case {case}: doc {row_doc} row {row} changed, only doc {doc} chunk {hit_chunk} may"
                            ));
                        }
                    }
                }
            }
            if !changed_inside {
                return Err(format!("case {case}: the edited chunk did not react"));
            }
        }
        Ok(())
    });
}

#[test]
fn block_diagonal_mask_equals_independent_chunks() {
    report("03 block-mask-equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for case in 0..10 {
            let chunk_size = [2, 4, 8][case % 3];
            let total = 2 * chunk_size;
            let encoder = random_encoder(&mut rng, chunk_size);
            let k = encoder.config.average_last_k;
            let ids: Vec<u32> = (0..total).map(|_| rng.gen_range(0..32)).collect();

            // One pass over both chunks, attention confined to the diagonal
            // blocks and positions restarting every chunk.
            let wide_ids = IdMatrix::from_rows(&[ids.clone()]);
            let wide_mask = IdMatrix::new(1, total, 1);
            let pattern = build_block_diagonal_mask(total, chunk_size).unwrap();
            let joint = encoder
                .forward_masked(&wide_ids, &wide_mask, &pattern, chunk_size)
                .map_err(|e| format!("case {case}: {e}"))?;
            let joint = average_last_k_layers(&joint, k).unwrap();

            // Two plain passes, one chunk each.
            let mut split_rows = Vec::new();
            for chunk in 0..2 {
                let piece = ids[chunk * chunk_size..(chunk + 1) * chunk_size].to_vec();
                let states = encoder
                    .forward(&IdMatrix::from_rows(&[piece]), &IdMatrix::new(1, chunk_size, 1))
                    .map_err(|e| format!("case {case}: {e}"))?;
                split_rows.extend(average_last_k_layers(&states, k).unwrap().to_vec());
            }

            let a = joint.to_vec();
            for (i, (x, y)) in a.iter().zip(&split_rows).enumerate() {
                if (x - y).abs() > 1e-5 {
                    return Err(format!(
                        "case {case} entry {i}: joint {x} vs split {y} beyond 1e-5"
                    ));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn attention_memory_accounting() {
    report("04 memory-accounting", || {
        // The headline figure: 128-token chunks inside a 512-token budget
        // touch exactly 1/16th of the full attention matrix.
        let seq = memory_report(512, 128, MemoryMode::Sequential).unwrap();
        if seq.attention_entries != 128 * 128 {
            return Err(format!("sequential entries {}", seq.attention_entries));
        }
        if seq.ratio_vs_full_512 != 0.0625 {
            return Err(format!("ratio {} is not exactly 0.0625", seq.ratio_vs_full_512));
        }

        // Vectorized cost is linear in the padded length: doubling the
        // document doubles the live entries.
        for t in [256usize, 512, 1024] {
            let small = memory_report(t, 128, MemoryMode::Vectorized).unwrap();
            let big = memory_report(2 * t, 128, MemoryMode::Vectorized).unwrap();
            if big.attention_entries != 2 * small.attention_entries {
                return Err(format!(
                    "vectorized entries not linear: T={t} gives {}, T={} gives {}",
                    small.attention_entries,
                    2 * t,
                    big.attention_entries
                ));
            }
        }

        // Sequential peak never grows with the document; full attention
        // grows with its square.
        for t in [256usize, 512, 1024, 2048] {
            let s = memory_report(t, 128, MemoryMode::Sequential).unwrap();
            if s.attention_entries != 128 * 128 {
                return Err(format!("sequential entries at T={t}: {}", s.attention_entries));
            }
            let f = memory_report(t, 128, MemoryMode::Full).unwrap();
            if f.attention_entries != (t * t) as u64 {
                return Err(format!("full entries at T={t}: {}", f.attention_entries));
            }
        }
        Ok(())
    });
}

#[test]
fn gradients_match_finite_differences() {
    report("05 gradient-integrity", || {
        // Two-chunk document in 64-bit mode so central differences are
        // trustworthy. max_position equals the chunk size, so every
        // position row is exercised.
        let corpus = ["alpha beta gamma delta epsilon zeta"];
        let vocab = build_vocab(&corpus, 32, 1).unwrap();
        let encoder_config = EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab.len(),
            max_position: 4,
            average_last_k: 2,
        };
        let head_config = TextCnnConfig {
            window_sizes: vec![2, 3],
            filters_per_window: 2,
            num_classes: 2,
            dropout: None,
        };
        let model: Model<f64> = Model::init(
            ModelKind::ChunkBert,
            encoder_config,
            head_config,
            4,
            ChunkMode::Vectorized,
            505,
        )
        .unwrap();

        let text = corpus[0];
        let loss_fn = || {
            let logits = model.batch_logits(&vocab, &[text], 8).unwrap();
            cross_entropy_loss(&logits, &[0]).unwrap()
        };

        let params = model.trainable();
        let check = finite_difference_check(&loss_fn, &params, 1e-5, 1e-3, 4, 55)
            .map_err(|e| format!("gradient check failed to run: {e}"))?;
        if !check.passed {
            return Err(format!(
                "max relative error {} exceeds 1e-3",
                check.max_relative_error
            ));
        }

        // Every trainable tensor must feel the loss on a generic input.
        for p in &params {
            p.zero_grad();
        }
        loss_fn().backward().unwrap();
        for p in &params {
            if p.grad().iter().all(|g| *g == 0.0) {
                return Err(format!("parameter {} received no gradient", p.name()));
            }
        }
        Ok(())
    });
}

#[test]
fn feature_vector_contract() {
    report("06 textcnn-contract", || {
        // Three windows with a hundred filters each always pool to a
        // 300-wide feature row, whatever the input length.
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let config = TextCnnConfig {
            window_sizes: vec![3, 4, 5],
            filters_per_window: 100,
            num_classes: 2,
            dropout: None,
        };
        let params = TextCnnParams::<f32>::init(config, 4, 0.02, &mut rng).unwrap();
        for t in [5usize, 128, 1024] {
            let data: Vec<f32> = (0..t * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = Tensor::from_vec(&[t, 4], data);
            let out = textcnn_forward(&params, &input, None).unwrap();
            if out.feature.shape() != [1, 300] {
                return Err(format!("T={t}: feature shape {:?}", out.feature.shape()));
            }
        }

        // Convolution and pooling against a plain sliding-window loop.
        let mut rng = ChaCha8Rng::seed_from_u64(607);
        let config = TextCnnConfig {
            window_sizes: vec![2, 3],
            filters_per_window: 2,
            num_classes: 2,
            dropout: None,
        };
        let d = 3;
        let t = 6;
        let params = TextCnnParams::<f64>::init(config, d, 0.5, &mut rng).unwrap();
        let data: Vec<f64> = (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(&[t, d], data.clone());
        let got = textcnn_forward(&params, &input, None).unwrap().feature.to_vec();

        let mut want = Vec::new();
        for (wi, &w) in [2usize, 3].iter().enumerate() {
            for f in 0..2 {
                let kernel = params.kernels[wi][f].values();
                let bias = params.biases[wi][f].values()[0];
                let mut best = f64::NEG_INFINITY;
                for start in 0..=(t - w) {
                    let mut acc = bias;
                    for r in 0..w {
                        for c in 0..d {
                            acc += kernel[r * d + c] * data[(start + r) * d + c];
                        }
                    }
                    best = best.max(acc.max(0.0));
                }
                want.push(best);
            }
        }
        for (i, (x, y)) in got.iter().zip(&want).enumerate() {
            if (x - y).abs() > 1e-9 {
                return Err(format!("feature {i}: {x} vs oracle {y}"));
            }
        }

        // Pinned hand case: column [1, 3, 2], kernel of ones over two rows
        // and zero bias gives windows [4, 5], so the pooled value is 5.
        let mut rng = ChaCha8Rng::seed_from_u64(608);
        let config = TextCnnConfig {
            window_sizes: vec![2],
            filters_per_window: 1,
            num_classes: 1,
            dropout: None,
        };
        let params = TextCnnParams::<f64>::init(config, 1, 0.02, &mut rng).unwrap();
        params.kernels[0][0].load_values(&[1.0, 1.0]);
        params.biases[0][0].load_values(&[0.0]);
        let input = Tensor::from_vec(&[3, 1], vec![1.0, 3.0, 2.0]);
        let pooled = textcnn_forward(&params, &input, None).unwrap().feature.to_vec()[0];
        if pooled != 5.0 {
            return Err(format!("hand case pooled {pooled}, want 5"));
        }
        Ok(())
    });
}

/// Builds the paired-marker corpus: 126 filler words, a marker in the
/// first chunk region and one in the last, label = exactly one present.
/// Filler is drawn from two types, so at this document length every filler
/// word occurs in every document and the markers are the only tokens whose
/// presence carries information.
fn xor_documents(split_seed: u64, count: usize) -> Vec<LabeledDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
    let mut docs = Vec::with_capacity(count);
    for i in 0..count {
        let has_first = (i / 2) % 2 == 0;
        let has_last = i % 2 == 0;
        let mut words: Vec<String> =
            (0..126).map(|_| format!("f{:02}", rng.gen_range(0..2))).collect();
        if has_first {
            words[4] = "alpha".to_string();
        }
        if has_last {
            words[115] = "beta".to_string();
        }
        let label = usize::from(has_first != has_last);
        docs.push(LabeledDocument { text: words.join(" "), labels: vec![label] });
    }
    docs
}

#[test]
fn long_range_task_separates_models() {
    report("07 long-range-task", || {
        let start = Instant::now();

        // Eight 16-token chunks per document. The two marker positions land
        // in the first and the last chunk, 111 words apart, so a 16-token
        // reading window can never see both.
        let data = DataSplits {
            train: xor_documents(71, 128),
            dev: xor_documents(72, 16),
            test: xor_documents(73, 32),
        };
        let all_texts: Vec<&str> = data
            .train
            .iter()
            .chain(&data.dev)
            .chain(&data.test)
            .map(|d| d.text.as_str())
            .collect();
        let vocab = build_vocab(&all_texts, 64, 1).unwrap();

        let encoder_config = EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            d_model: 16,
            d_ff: 32,
            vocab_size: vocab.len(),
            max_position: 16,
            average_last_k: 2,
        };
        let head_config = TextCnnConfig {
            window_sizes: vec![1, 3],
            filters_per_window: 64,
            num_classes: 2,
            dropout: None,
        };
        let cfg = TrainConfig {
            learning_rate: 0.003,
            batch_size: 8,
            max_epochs: 60,
            patience: 60,
            max_tokens: 128,
            chunk_size: 16,
            seed: 70,
            runs: 5,
        };

        let (chunked, _) = run_experiment::<f32>(
            ModelKind::ChunkBert,
            &encoder_config,
            &head_config,
            ChunkMode::Vectorized,
            &vocab,
            &data,
            TaskKind::Binary,
            &cfg,
            None,
        )
        .map_err(|e| format!("chunked runs failed: {e}"))?;

        let (truncated, _) = run_experiment::<f32>(
            ModelKind::Truncation,
            &encoder_config,
            &head_config,
            ChunkMode::Vectorized,
            &vocab,
            &data,
            TaskKind::Binary,
            &cfg,
            None,
        )
        .map_err(|e| format!("truncation runs failed: {e}"))?;

        let elapsed = start.elapsed();
        if chunked.mean < 0.90 {
            return Err(format!(
                "chunked mean accuracy {:.3} (runs {:?}) below 0.90",
                chunked.mean, chunked.per_run
            ));
        }
        if truncated.mean > 0.60 {
            return Err(format!(
                "truncation mean accuracy {:.3} (runs {:?}) above 0.60",
                truncated.mean, truncated.per_run
            ));
        }
        if elapsed.as_secs() >= 600 {
            return Err(format!("both experiments took {elapsed:?}, budget is 10 min"));
        }
        Ok(())
    });
}

/// Power iteration written as dense matrix-vector products, sharing only
/// the published update rule with the implementation under test.
fn pagerank_oracle(weights: &[Vec<f64>], damping: f64) -> Vec<f64> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let out_sum: Vec<f64> = weights.iter().map(|row| row.iter().sum()).collect();
    let mut shares = vec![vec![0.0; n]; n];
    for j in 0..n {
        if out_sum[j] > 0.0 {
            for i in 0..n {
                shares[i][j] = weights[j][i] / out_sum[j];
            }
        }
    }
    let mut scores = vec![1.0; n];
    for _ in 0..200 {
        let dangling: f64 =
            (0..n).filter(|&j| out_sum[j] == 0.0).map(|j| scores[j]).sum::<f64>() / n as f64;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let inflow: f64 = (0..n).map(|j| shares[i][j] * scores[j]).sum();
                (1.0 - damping) + damping * (inflow + dangling)
            })
            .collect();
        let delta = scores
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        scores = next;
        if delta <= 1e-6 {
            break;
        }
    }
    scores
}

fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx
}

#[test]
fn sentence_ranking_against_oracle() {
    report("08 textrank-correctness", || {
        let mut rng = ChaCha8Rng::seed_from_u64(808);

        // Scores match the oracle on random symmetric graphs.
        for case in 0..20 {
            let n = rng.gen_range(1..=10);
            let mut weights = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen_bool(0.5) {
                        let w = rng.gen_range(0.05..2.0);
                        weights[i][j] = w;
                        weights[j][i] = w;
                    }
                }
            }
            let got = pagerank(&weights, 0.85, 1e-6, 200)
                .map_err(|e| format!("case {case}: {e}"))?;
            let want = pagerank_oracle(&weights, 0.85);
            for i in 0..n {
                if (got.scores[i] - want[i]).abs() > 1e-6 {
                    return Err(format!(
                        "case {case} node {i}: {} vs oracle {} beyond 1e-6",
                        got.scores[i], want[i]
                    ));
                }
            }

            // Rescaling every edge leaves the ranking untouched.
            let scaled: Vec<Vec<f64>> = weights
                .iter()
                .map(|row| row.iter().map(|w| w * 37.0).collect())
                .collect();
            let rescored = pagerank(&scaled, 0.85, 1e-6, 200).unwrap();
            if argsort(&got.scores) != argsort(&rescored.scores) {
                return Err(format!("case {case}: ranking changed under weight scaling"));
            }
        }

        // Selection never exceeds its budget plus the two wrapper tokens.
        let vocab_corpus = ["w0 w1 w2 w3 w4 w5 w6 w7 w8 w9"];
        let vocab = build_vocab(&vocab_corpus, 64, 1).unwrap();
        for case in 0..100 {
            let sentences = rng.gen_range(1..=8);
            let text: String = (0..sentences)
                .map(|_| {
                    let len = rng.gen_range(1..=9);
                    let body: Vec<String> =
                        (0..len).map(|_| format!("w{}", rng.gen_range(0..10))).collect();
                    body.join(" ") + "."
                })
                .collect::<Vec<_>>()
                .join(" ");
            let budget = rng.gen_range(1..=30);
            let strategy = SelectionStrategy { kind: SelectionKind::TextRank, budget };
            let out = select_tokens(&strategy, &vocab, &text)
                .map_err(|e| format!("doc {case}: {e}"))?;
            if out.token_ids.len() > budget + 2 {
                return Err(format!(
                    "doc {case}: kept {} tokens with budget {budget}",
                    out.token_ids.len()
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn micro_f1_against_counting_oracle() {
    report("09 metric-correctness", || {
        // The worked counting example: gold {a,b},{a}; predicted {a},{a,c}
        // gives TP=2, FP=1, FN=1 and F1 = 2/3.
        let pinned = micro_f1(&[vec![0, 1], vec![0]], &[vec![0], vec![0, 2]]).unwrap();
        if (pinned - 2.0 / 3.0).abs() > 1e-12 {
            return Err(format!("pinned example gave {pinned}"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(909);
        for case in 0..100 {
            let docs = rng.gen_range(1..=8);
            let labels = rng.gen_range(1..=6);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<usize> {
                (0..labels).filter(|_| rng.gen_bool(0.4)).collect()
            };
            let gold: Vec<Vec<usize>> = (0..docs).map(|_| draw(&mut rng)).collect();
            let pred: Vec<Vec<usize>> = (0..docs).map(|_| draw(&mut rng)).collect();

            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fne = 0u64;
            for (g, p) in gold.iter().zip(&pred) {
                let gs: HashSet<usize> = g.iter().copied().collect();
                let ps: HashSet<usize> = p.iter().copied().collect();
                tp += gs.intersection(&ps).count() as u64;
                fp += ps.difference(&gs).count() as u64;
                fne += gs.difference(&ps).count() as u64;
            }
            let want = if tp + fp + fne == 0 {
                1.0
            } else if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fne as f64)
            };
            let got = micro_f1(&gold, &pred).unwrap();
            if (got - want).abs() > 1e-12 {
                return Err(format!("case {case}: {got} vs oracle {want}"));
            }
        }

        // Long-only evaluation keeps exactly the documents whose raw word
        // count is strictly above the threshold.
        let corpus = ["aaa bbb ccc"];
        let vocab = build_vocab(&corpus, 32, 1).unwrap();
        let encoder_config = EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: vocab.len(),
            max_position: 8,
            average_last_k: 2,
        };
        let head_config = TextCnnConfig {
            window_sizes: vec![2],
            filters_per_window: 2,
            num_classes: 2,
            dropout: None,
        };
        let model: Model<f32> = Model::init(
            ModelKind::ChunkBert,
            encoder_config,
            head_config,
            4,
            ChunkMode::Vectorized,
            99,
        )
        .unwrap();
        let doc_of = |words: usize| LabeledDocument {
            text: vec!["aaa"; words].join(" "),
            labels: vec![0],
        };
        let docs = vec![doc_of(100), doc_of(512), doc_of(600), doc_of(700)];
        let scored = evaluate(&model, &vocab, &docs, TaskKind::Binary, 8, Some(512))
            .map_err(|e| format!("long-only evaluation failed: {e}"))?;
        if scored.documents != 2 {
            return Err(format!(
                "threshold 512 kept {} documents, want the two above 512",
                scored.documents
            ));
        }
        Ok(())
    });
}

#[test]
fn training_is_reproducible_and_persistent() {
    report("10 reproducibility", || {
        use std::process::Command;

        let bin = env!("CARGO_BIN_EXE_chunkbert");
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = |name: &str| dir.path().join(name);

        std::fs::write(path("labels.txt"), "no\nyes\n").map_err(|e| e.to_string())?;
        let jsonl = |count: usize, salt: usize| -> String {
            (0..count)
                .map(|i| {
                    let (word, label) = if (i + salt) % 2 == 0 { ("aaa", "no") } else { ("bbb", "yes") };
                    format!(
                        "{{\"text\": \"{word} fill pad word\", \"labels\": [\"{label}\"]}}"
                    )
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        std::fs::write(path("train.jsonl"), jsonl(8, 0)).map_err(|e| e.to_string())?;
        std::fs::write(path("dev.jsonl"), jsonl(4, 0)).map_err(|e| e.to_string())?;
        std::fs::write(path("test.jsonl"), jsonl(4, 1)).map_err(|e| e.to_string())?;

        let train = |out: &str| -> Result<std::process::Output, String> {
            Command::new(bin)
                .args([
                    "train",
                    "--train", path("train.jsonl").to_str().unwrap(),
                    "--dev", path("dev.jsonl").to_str().unwrap(),
                    "--test", path("test.jsonl").to_str().unwrap(),
                    "--labels", path("labels.txt").to_str().unwrap(),
                    "--task", "binary",
                    "--out-dir", path(out).to_str().unwrap(),
                    "--seed", "5",
                    "--lr", "0.01",
                    "--batch-size", "4",
                    "--epochs", "2",
                    "--patience", "2",
                    "--runs", "2",
                    "--max-tokens", "8",
                    "--chunk-size", "4",
                    "--d-model", "8",
                    "--num-layers", "1",
                    "--num-heads", "2",
                    "--d-ff", "16",
                    "--max-position", "8",
                    "--windows", "2",
                    "--filters", "2",
                    "--vocab-size", "64",
                ])
                .output()
                .map_err(|e| e.to_string())
        };

        for out in ["one", "two"] {
            let r = train(out)?;
            if !r.status.success() {
                return Err(format!(
                    "training into {out} failed: {}",
                    String::from_utf8_lossy(&r.stderr)
                ));
            }
        }

        // Same seed, same data: metrics and checkpoints must match byte
        // for byte.
        for name in ["metrics.json", "run0.ckpt", "run1.ckpt", "run0.log.jsonl"] {
            let a = std::fs::read(path("one").join(name)).map_err(|e| e.to_string())?;
            let b = std::fs::read(path("two").join(name)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{name} differs between identical runs"));
            }
        }

        // A loaded checkpoint rebuilds the exact same bytes.
        let original = path("one").join("run0.ckpt");
        let (header, tensors) =
            chunkbert::cli::checkpoint::load_checkpoint(&original).map_err(|e| e.to_string())?;
        let model = chunkbert::cli::checkpoint::model_from_checkpoint(&header, &tensors)
            .map_err(|e| e.to_string())?;
        let copy = path("one").join("copy.ckpt");
        chunkbert::cli::checkpoint::save_checkpoint(&copy, &header, &model.all_parameters())
            .map_err(|e| e.to_string())?;
        let a = std::fs::read(&original).map_err(|e| e.to_string())?;
        let b = std::fs::read(&copy).map_err(|e| e.to_string())?;
        if a != b {
            return Err("checkpoint did not round-trip byte for byte".to_string());
        }

        // And evaluation through either file prints the same result.
        let eval = |ckpt: &std::path::Path| -> Result<Vec<u8>, String> {
            let r = Command::new(bin)
                .args([
                    "eval",
                    "--checkpoint", ckpt.to_str().unwrap(),
                    "--data", path("test.jsonl").to_str().unwrap(),
                ])
                .output()
                .map_err(|e| e.to_string())?;
            if !r.status.success() {
                return Err(format!("eval failed: {}", String::from_utf8_lossy(&r.stderr)));
            }
            Ok(r.stdout)
        };
        let first = eval(&original)?;
        let second = eval(&original)?;
        let through_copy = eval(&copy)?;
        if first != second || first != through_copy {
            return Err("evaluation output changed across identical checkpoints".to_string());
        }
        Ok(())
    });
}
