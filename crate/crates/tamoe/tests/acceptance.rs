//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `cargo test --test acceptance -- --nocapture`
//! to see every line).

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tamoe::decoding::{beam_search, greedy_decode, score_sequence};
use tamoe::metrics::{bleu, cider, evaluate_detailed, rouge_l, CiderVariant, Corpus, CIDER_SIGMA};
use tamoe::model::{BatchGraph, DropoutMaskSet, Model, ModelConfig, ModelFamily};
use tamoe::numerics::gradcheck::finite_difference_grad;
use tamoe::numerics::params::ParamStore;
use tamoe::numerics::tensor::Tensor;
use tamoe::text::{tokenize, EmbeddingTable, Vocabulary};
use tamoe::topic::{tfidf_embedding, TopicCorpus, TopicEmbedding, TopicRecord};

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

/// The standard tiny configuration used by the gradient certification.
fn tiny_config() -> ModelConfig {
    ModelConfig {
        family: ModelFamily::Tamoe,
        feature_dim: 6,
        encoder_hidden: 8,
        decoder_hidden: 16,
        embedding_dim: 12,
        attention_dim: 8,
        expert_count: 2,
        expert_dim: 12,
        gate_hidden: 8,
        temperature: 1.0,
        dropout: 0.3,
        max_features: 200,
        max_caption_len: 32,
    }
}

fn rand_topic(dim_each: usize, seed: u64) -> TopicEmbedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TopicEmbedding {
        vector: Tensor::rand_uniform(vec![2 * dim_each], -1.0, 1.0, &mut rng),
        tfidf_zeroed: false,
    }
}

/// Criterion 1: end-to-end finite-difference certification on the tiny
/// config (vocab 20, H_e=8, H_d=16, D=12, S=2, d_e=12, m=3, T=4), all
/// non-frozen parameters, max relative error < 1e-4, under 60 s.
#[test]
fn c1_gradient_certification() {
    let started = Instant::now();
    let cfg = tiny_config();
    // seed screened so no ReLU unit sits within the finite-difference step
    // of its kink (any crossing makes the two-sided difference meaningless)
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut model = Model::new(cfg.clone(), 20, 1, &mut rng).unwrap();
    let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
    let topic = TopicEmbedding {
        vector: Tensor::rand_uniform(vec![24], -1.0, 1.0, &mut rng),
        tfidf_zeroed: false,
    };
    let masks = DropoutMaskSet::sample(&cfg, &mut rng);
    let gold = [5u32, 11, 7, 2];

    let ids = model.ids.clone();
    let config = model.config.clone();
    let loss_of = |params: &ParamStore| -> tamoe::Result<f64> {
        let shell = Model {
            config: config.clone(),
            params: params.clone(),
            ids: ids.clone(),
            vocab_size: 20,
            vocab_fingerprint: 1,
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut bg = BatchGraph::new(&shell);
        let ctx = bg.begin_sequence(&feats, &topic, &masks)?;
        let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut r)?;
        let mean = bg.token_mean_loss(std::slice::from_ref(&tf))?;
        Ok(bg.value(mean).item())
    };

    // analytic gradients into the store
    let mut bg = BatchGraph::new(&model);
    let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
    let tf = bg
        .teacher_forced(&ctx, &gold, 1.0, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let mean = bg.token_mean_loss(std::slice::from_ref(&tf)).unwrap();
    let grads = bg.backward_params(mean).unwrap();
    drop(bg);
    for (id, g) in grads {
        model.params.accumulate_grad(id, &g).unwrap();
    }

    let report =
        finite_difference_grad(&mut |s| loss_of(s), &mut model.params, 2e-3, 1e-4).unwrap();
    let elapsed = started.elapsed();
    let worst = report.worst_param().cloned().unwrap_or_default();
    verdict(
        "criterion 1 (gradient certification)",
        report.pass && elapsed.as_secs() < 60,
        &format!(
            "{} entries, max rel err {:.3e} (worst: {}), {:.1?}",
            report.entries_checked, report.max_rel_err, worst.0, elapsed
        ),
    );
}

/// Criterion 2: gate invariants over 1000 random topic embeddings.
#[test]
fn c2_gating_invariants() {
    let cfg = ModelConfig {
        expert_count: 8,
        expert_dim: 12,
        ..tiny_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(cfg.clone(), 20, 1, &mut rng).unwrap();
    let mut hot_model = model.clone();
    hot_model.config.temperature = 1e6;

    let feats = Tensor::rand_uniform(vec![2, 6], -1.0, 1.0, &mut rng);
    let masks = DropoutMaskSet::ones(&cfg);

    let mut max_sum_err = 0.0f64;
    let mut max_spread = 0.0f64;
    for i in 0..1000 {
        let topic = rand_topic(12, 10_000 + i);
        let mut bg = BatchGraph::new(&model);
        let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
        let beta = bg.value(ctx.beta()).data();
        max_sum_err = max_sum_err.max((beta.iter().sum::<f64>() - 1.0).abs());

        let mut bg_hot = BatchGraph::new(&hot_model);
        let ctx_hot = bg_hot.begin_sequence(&feats, &topic, &masks).unwrap();
        let b = bg_hot.value(ctx_hot.beta()).data();
        let spread = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - b.iter().cloned().fold(f64::INFINITY, f64::min);
        max_spread = max_spread.max(spread);
    }

    // beta must be constant across decode steps for a fixed topic
    let mut bg = BatchGraph::new(&model);
    bg.enable_trace();
    let topic = rand_topic(12, 5);
    let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
    let mut state = bg.initial_decoder_state();
    let mut prev = tamoe::text::BOS;
    for _ in 0..32 {
        let out = bg.decode_step(&ctx, prev, state).unwrap();
        state = out.state;
        prev = 4;
    }
    let trace = bg.trace().unwrap();
    let step_constant = trace.betas.windows(2).all(|w| w[0] == w[1]);

    verdict(
        "criterion 2 (gating invariants)",
        max_sum_err < 1e-9 && max_spread < 1e-3 && step_constant && trace.betas.len() == 32,
        &format!(
            "max |sum-1| {max_sum_err:.2e}, max spread at tau=1e6 {max_spread:.2e}, beta constant over 32 steps: {step_constant}"
        ),
    );
}

/// Criterion 3: a one-expert mixture is bitwise the Topic baseline under
/// shared parameters, over 100 random inputs.
#[test]
fn c3_degeneracy_equivalence() {
    let cfg = ModelConfig {
        family: ModelFamily::Tamoe,
        expert_count: 1,
        ..tiny_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tamoe_model = Model::new(cfg, 20, 1, &mut rng).unwrap();
    let mut topic_model = tamoe_model.clone();
    topic_model.config.family = ModelFamily::Topic;

    let mut all_equal = true;
    for i in 0..100 {
        let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
        let topic = rand_topic(12, 20_000 + i);
        let masks = DropoutMaskSet::ones(&tamoe_model.config);
        let logits_of = |m: &Model| {
            let mut bg = BatchGraph::new(m);
            let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
            let state = bg.initial_decoder_state();
            let out = bg.decode_step(&ctx, tamoe::text::BOS, state).unwrap();
            bg.value(out.logits)
                .data()
                .iter()
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        if logits_of(&tamoe_model) != logits_of(&topic_model) {
            all_equal = false;
            break;
        }
    }
    verdict(
        "criterion 3 (S=1 degeneracy)",
        all_equal,
        "100 random inputs bitwise identical between one-expert mixture and Topic baseline",
    );
}

/// Criterion 4: variational masks constant within a sample across 32 steps,
/// distinct across samples, and unbiased at p = 0.5 (chi-squared, alpha 0.01).
#[test]
fn c4_variational_dropout() {
    let cfg = ModelConfig {
        dropout: 0.5,
        ..tiny_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::new(cfg.clone(), 20, 1, &mut rng).unwrap();
    let feats = Tensor::rand_uniform(vec![2, 6], -1.0, 1.0, &mut rng);

    let mut ones = 0u64;
    let mut bits = 0u64;
    let mut seen_masks: Vec<Vec<f64>> = Vec::new();
    let mut within_ok = true;
    for i in 0..100 {
        let masks = DropoutMaskSet::sample(&cfg, &mut rng);
        for m in std::iter::once(&masks.dec_input).chain(masks.experts.iter()) {
            ones += m.data().iter().filter(|&&x| x == 1.0).count() as u64;
            bits += m.len() as u64;
        }
        // drive a full 32-step sequence and snapshot the applied mask
        let mut bg = BatchGraph::new(&model);
        bg.enable_trace();
        let topic = rand_topic(12, 30_000 + i);
        let ctx = bg.begin_sequence(&feats, &topic, &masks).unwrap();
        let mut state = bg.initial_decoder_state();
        for _ in 0..32 {
            let out = bg.decode_step(&ctx, 4, state).unwrap();
            state = out.state;
        }
        let trace = bg.trace().unwrap();
        within_ok &= trace.dec_masks.len() == 32
            && trace.dec_masks.windows(2).all(|w| w[0] == w[1]);
        seen_masks.push(trace.dec_masks[0].clone());
    }
    let across_distinct = {
        let mut distinct = true;
        for i in 0..seen_masks.len() {
            for j in i + 1..seen_masks.len() {
                if seen_masks[i] == seen_masks[j] {
                    distinct = false;
                }
            }
        }
        distinct
    };
    // two-cell chi-squared against p = 0.5, 1 dof, alpha = 0.01 -> 6.635
    let expected = bits as f64 / 2.0;
    let chi2 = {
        let d1 = ones as f64 - expected;
        let d0 = (bits - ones) as f64 - expected;
        d1 * d1 / expected + d0 * d0 / expected
    };
    verdict(
        "criterion 4 (variational dropout)",
        within_ok && across_distinct && chi2 < 6.635,
        &format!(
            "masks constant over 32 steps: {within_ok}, 100 samples distinct: {across_distinct}, chi2 {chi2:.2} < 6.635 over {bits} bits"
        ),
    );
}

/// Criterion 5: TF-IDF weights and embeddings against a brute-force loop
/// oracle on 50 randomized corpora; corpus-wide tokens get exactly 0.
#[test]
fn c5_tfidf_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_err = 0.0f64;
    let mut corpus_wide_ok = true;

    for trial in 0..50 {
        // random corpus: <= 10 labels, <= 200 tokens total
        let n_labels = rng.random_range(2..=10);
        let pool: Vec<String> = (0..rng.random_range(4..=14))
            .map(|i| format!("w{i}"))
            .collect();
        let mut total_tokens = 0usize;
        let records: Vec<TopicRecord> = (0..n_labels)
            .map(|l| {
                let n_docs = rng.random_range(1..=3);
                let documents = (0..n_docs)
                    .map(|_| {
                        let len = rng.random_range(1..=(200 - total_tokens).clamp(1, 12));
                        total_tokens += len;
                        (0..len)
                            .map(|_| pool[rng.random_range(0..pool.len())].clone())
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                TopicRecord {
                    label: format!("label{l}"),
                    documents,
                }
            })
            .collect();
        let corpus = TopicCorpus::from_records(&records);

        // brute-force recount with raw loops
        let count_in = |label: usize, token: &str| -> u64 {
            let mut z = 0;
            for doc in &records[label].documents {
                for tok in doc.split(' ') {
                    if tok == token {
                        z += 1;
                    }
                }
            }
            z
        };
        let total_of = |label: usize| -> u64 {
            let mut t = 0;
            for doc in &records[label].documents {
                t += doc.split(' ').filter(|s| !s.is_empty()).count() as u64;
            }
            t
        };
        let labels_with = |token: &str| -> u64 {
            (0..n_labels).filter(|&l| count_in(l, token) > 0).count() as u64
        };

        // a fake embedding table over the pool for the Eq.-2 check
        let seqs: Vec<Vec<String>> = pool.iter().map(|w| vec![w.clone()]).collect();
        let vocab = Vocabulary::build(&[&seqs], 1);
        let dim = 5;
        let table = EmbeddingTable {
            matrix: Tensor::rand_uniform(vec![vocab.len(), dim], -1.0, 1.0, &mut rng),
            dim,
            frozen: true,
            coverage: 1.0,
        };

        for (l, rec) in records.iter().enumerate() {
            if total_of(l) == 0 {
                continue;
            }
            for token in &pool {
                let got = corpus.tfidf_weight(&rec.label, token).unwrap();
                let z = count_in(l, token);
                let want = if z == 0 {
                    0.0
                } else {
                    (z as f64 / total_of(l) as f64)
                        * ((n_labels as f64 / labels_with(token) as f64).ln())
                };
                max_err = max_err.max((got - want).abs());
                if z > 0 && labels_with(token) == n_labels as u64 && got != 0.0 {
                    corpus_wide_ok = false;
                }
            }
            // Eq.-2 embedding against an explicit loop over distinct tokens
            let got_emb = tfidf_embedding(&corpus, &rec.label, &vocab, &table).unwrap();
            let mut want_emb = vec![0.0f64; dim];
            let mut distinct: Vec<&String> = Vec::new();
            for doc in &rec.documents {
                for tok in doc.split(' ') {
                    if !tok.is_empty() && !distinct.iter().any(|d| *d == tok) {
                        distinct.push(pool.iter().find(|p| *p == tok).unwrap());
                    }
                }
            }
            for token in distinct {
                let z = count_in(l, token);
                let w = (z as f64 / total_of(l) as f64)
                    * ((n_labels as f64 / labels_with(token) as f64).ln());
                let row = table.row(vocab.id(token));
                for (acc, &x) in want_emb.iter_mut().zip(row) {
                    *acc += w * x;
                }
            }
            for (g, w) in got_emb.data().iter().zip(&want_emb) {
                max_err = max_err.max((g - w).abs());
            }
        }
        let _ = trial;
    }
    verdict(
        "criterion 5 (TF-IDF oracle)",
        max_err < 1e-12 && corpus_wide_ok,
        &format!("max |impl - brute force| {max_err:.2e}; corpus-wide tokens exactly 0: {corpus_wide_ok}"),
    );
}

/// Criterion 6: exhaustive-width beam equals brute-force enumeration on a
/// vocab-6 model; beam(1) equals greedy; best score non-decreasing in width.
#[test]
fn c6_beam_search_oracle() {
    let mut cfg = tiny_config();
    cfg.max_caption_len = 4;
    cfg.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::new(cfg, 6, 1, &mut rng).unwrap();
    let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
    let topic = rand_topic(12, 6);

    // brute force over all sequences of the two content words, finished at
    // any length <= 3 plus unfinished length-4
    let content = [4u32, 5];
    let mut best_score = f64::NEG_INFINITY;
    let mut best_tokens = Vec::new();
    let mut stack: Vec<Vec<u32>> = vec![vec![]];
    let mut enumerated = 0usize;
    while let Some(seq) = stack.pop() {
        if seq.len() < 4 {
            for &c in &content {
                let mut ext = seq.clone();
                ext.push(c);
                stack.push(ext);
            }
        }
        let fin = score_sequence(&model, &feats, &topic, &seq, true).unwrap();
        enumerated += 1;
        if fin > best_score {
            best_score = fin;
            best_tokens = seq.clone();
        }
        if seq.len() == 4 {
            let unf = score_sequence(&model, &feats, &topic, &seq, false).unwrap();
            enumerated += 1;
            if unf > best_score {
                best_score = unf;
                best_tokens = seq.clone();
            }
        }
    }

    let width = 6usize.pow(4);
    let hyps = beam_search(&model, &feats, &topic, width, 4, false).unwrap();
    let exhaustive_ok =
        (hyps[0].log_prob - best_score).abs() < 1e-9 && hyps[0].tokens == best_tokens;

    let greedy = greedy_decode(&model, &feats, &topic).unwrap();
    let beam1 = beam_search(&model, &feats, &topic, 1, 4, false).unwrap();
    let greedy_ok = beam1[0].tokens == greedy;

    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    for b in [1usize, 2, 3, 5, 8] {
        let h = beam_search(&model, &feats, &topic, b, 4, false).unwrap();
        if h[0].log_prob < prev - 1e-12 {
            monotone = false;
        }
        prev = h[0].log_prob;
    }

    verdict(
        "criterion 6 (beam-search oracle)",
        exhaustive_ok && greedy_ok && monotone,
        &format!(
            "enumerated {enumerated} sequences; exhaustive beam matches brute force: {exhaustive_ok}, beam(1)==greedy: {greedy_ok}, monotone in width: {monotone}"
        ),
    );
}

/// Criterion 7: metric identities and frozen hand values.
#[test]
fn c7_metric_identities() {
    // identity corpus with exclusive n-grams and equal lengths
    let cands: Vec<String> = vec![
        "red fox jumps over fence".into(),
        "blue bird sings in tree".into(),
    ];
    let refs: Vec<Vec<String>> = vec![
        vec!["red fox jumps over fence".into()],
        vec!["blue bird sings in tree".into()],
    ];
    let corpus = Corpus::new(&cands, &refs).unwrap();
    let b = bleu(&corpus, 4, false);
    let r = rouge_l(&corpus);
    let c = cider(&corpus, CiderVariant::D);
    let identities_ok = b.iter().all(|&x| (x - 1.0).abs() < 1e-12)
        && (r - 1.0).abs() < 1e-12
        && c.per_n.iter().all(|&x| (x - 10.0).abs() < 1e-9);

    // hand case: BLEU-1 with brevity penalty
    let hand = Corpus::new(
        &["the cat sat".to_string()],
        &[vec!["the cat sat down".to_string()]],
    )
    .unwrap();
    let b1 = bleu(&hand, 4, false)[0];
    let bleu_hand_ok = (b1 - 0.7165).abs() < 1e-4;

    // hand case: ROUGE-L with P = R = 2/3
    let rh = Corpus::new(&["a b c".to_string()], &[vec!["a x c".to_string()]]).unwrap();
    let rouge_hand_ok = (rouge_l(&rh) - 2.0 / 3.0).abs() < 1e-4;

    // hand case: the Gaussian length penalty at delta = 6
    let penalty = (-36.0 / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let penalty_ok = (penalty - 0.6065).abs() < 1e-4;

    // mean-of-per-n identity on a nontrivial corpus
    let (report, _) = evaluate_detailed(
        &[
            "a man rides a horse".to_string(),
            "a woman plays guitar on stage".to_string(),
        ],
        &[
            vec![
                "a man rides a brown horse".to_string(),
                "someone rides a horse".to_string(),
            ],
            vec!["a woman plays a guitar".to_string()],
        ],
    )
    .unwrap();
    let mean_ok =
        (report.cider - report.cider_n.iter().sum::<f64>() / 4.0).abs() < 1e-9;

    verdict(
        "criterion 7 (metric identities)",
        identities_ok && bleu_hand_ok && rouge_hand_ok && penalty_ok && mean_ok,
        &format!(
            "identity scores 1.0/10.0: {identities_ok}, BLEU hand {b1:.4}, ROUGE hand ok: {rouge_hand_ok}, penalty {penalty:.4}, per-n mean identity: {mean_ok}"
        ),
    );
}

