//! Full experiment orchestration: build vocabulary and topic embeddings,
//! train one model family, decode the test splits with beam search, and
//! score them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{load_model, save_model};
use crate::decoding::beam_search;
use crate::error::{stage, Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{read_features, subsample_features, DatasetManifest, Split};
use crate::metrics::{evaluate_detailed, MetricReport};
use crate::model::Model;
use crate::numerics::tensor::Tensor;
use crate::text::{load_embeddings, EmbeddingMode, EmbeddingTable, Vocabulary, EOS};
use crate::topic::{topic_embedding, TopicCorpus, TopicEmbedding};
use crate::training::{train, EvalItem, TrainItem, TrainOutcome};

/// Everything assembled from a dataset directory before training starts.
pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub corpus: TopicCorpus,
    pub vocab: Vocabulary,
    /// Table used by the model (mode-dependent: frozen pretrained rows or
    /// trainable random rows).
    pub model_table: EmbeddingTable,
    /// Per-label topic embeddings with the ablation flags applied.
    pub topics: BTreeMap<String, TopicEmbedding>,
    pub train_items: Vec<TrainItem>,
    pub val_items: Vec<EvalItem>,
    pub seen_items: Vec<EvalItem>,
    pub unseen_items: Vec<EvalItem>,
}

fn zero_half(t: &mut TopicEmbedding, first: bool) {
    let d = t.vector.len() / 2;
    let range = if first { 0..d } else { d..2 * d };
    for x in &mut t.vector.data_mut()[range] {
        *x = 0.0;
    }
}

/// Load and assemble a dataset per the configuration.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedData> {
    let manifest = stage(
        "load-manifest",
        DatasetManifest::load(&config.dataset_dir.join("manifest.jsonl")),
    )?;
    stage("validate-manifest", manifest.validate(false).map(|_| ()))?;
    let corpus = stage(
        "load-topics",
        TopicCorpus::load(&config.dataset_dir.join("topics.jsonl")),
    )?;

    // open vocabulary: training captions plus the external topic corpus
    let mut train_seqs: Vec<Vec<String>> = Vec::new();
    for rec in manifest.split_records(Split::Train) {
        for cap in &rec.captions {
            train_seqs.push(crate::text::tokenize(cap));
        }
    }
    let topic_seqs = corpus.token_sequences();
    let vocab = Vocabulary::build(&[&train_seqs, &topic_seqs], config.min_count);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x746f7069);
    // the pretrained table always feeds the topic embeddings; the model's
    // own table additionally depends on the embedding mode
    let topic_table = stage(
        "load-embeddings",
        load_embeddings(
            &config.embedding_path(),
            &vocab,
            EmbeddingMode::PretrainedFrozen,
            config.embedding_dim,
            &mut rng,
        ),
    )?;
    let model_table = stage(
        "load-embeddings",
        load_embeddings(
            &config.embedding_path(),
            &vocab,
            config.embedding_mode()?,
            config.embedding_dim,
            &mut rng,
        ),
    )?;

    let mut topics = BTreeMap::new();
    let mut labels: Vec<String> = corpus.labels().to_vec();
    for rec in &manifest.records {
        if !labels.contains(&rec.activity_label) {
            labels.push(rec.activity_label.clone());
        }
    }
    for label in &labels {
        let mut emb = stage(
            "topic-embeddings",
            topic_embedding(label, &corpus, &vocab, &topic_table),
        )?;
        if !config.use_label_embedding {
            zero_half(&mut emb, true);
        }
        if !config.use_tfidf_embedding {
            zero_half(&mut emb, false);
        }
        topics.insert(label.clone(), emb);
    }

    // per-record assembly, with optional label-noise injection
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6e6f6973);
    let mut train_items = Vec::new();
    let mut val_items = Vec::new();
    let mut seen_items = Vec::new();
    let mut unseen_items = Vec::new();
    for rec in &manifest.records {
        let features = if config.use_video_features {
            let raw = stage("load-features", read_features(&manifest.feature_file(rec)))?;
            if raw.cols() != config.feature_dim {
                return Err(Error::Dim {
                    op: "feature dim",
                    lhs: vec![config.feature_dim],
                    rhs: raw.shape().to_vec(),
                }
                .in_stage("load-features"));
            }
            subsample_features(raw, config.max_features)
        } else {
            Tensor::zeros(vec![1, config.feature_dim])
        };
        let label = if config.label_noise > 0.0
            && noise_rng.random_bool(config.label_noise)
        {
            labels[noise_rng.random_range(0..labels.len())].clone()
        } else {
            rec.activity_label.clone()
        };
        let topic = topics[&label].clone();

        match rec.split {
            Split::Train => {
                for cap in &rec.captions {
                    let mut gold = vocab.encode(&crate::text::tokenize(cap));
                    gold.truncate(config.max_caption_len - 1);
                    if gold.is_empty() {
                        continue;
                    }
                    gold.push(EOS);
                    train_items.push(TrainItem {
                        video_id: rec.video_id.clone(),
                        label: rec.activity_label.clone(),
                        features: features.clone(),
                        topic: topic.clone(),
                        gold,
                    });
                }
            }
            split => {
                let item = EvalItem {
                    video_id: rec.video_id.clone(),
                    label: rec.activity_label.clone(),
                    features,
                    topic,
                    references: rec.captions.clone(),
                };
                match split {
                    Split::Val => val_items.push(item),
                    Split::SeenTest => seen_items.push(item),
                    Split::UnseenTest => unseen_items.push(item),
                    Split::Train => unreachable!(),
                }
            }
        }
    }

    Ok(PreparedData {
        manifest,
        corpus,
        vocab,
        model_table,
        topics,
        train_items,
        val_items,
        seen_items,
        unseen_items,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecodeRecord {
    pub video_id: String,
    pub caption: String,
    pub log_prob: f64,
}

/// Beam-decode an evaluation set, writing one JSON record per line.
pub fn decode_to_file(
    model: &Model,
    vocab: &Vocabulary,
    items: &[EvalItem],
    beam: usize,
    max_len: usize,
    length_normalize: bool,
    path: &Path,
) -> Result<Vec<DecodeRecord>> {
    let mut out = Vec::with_capacity(items.len());
    let mut file = fs::File::create(path)?;
    for item in items {
        let hyps = beam_search(model, &item.features, &item.topic, beam, max_len, length_normalize)?;
        let best = hyps.first().ok_or_else(|| {
            Error::Numerical(format!("no hypothesis for video '{}'", item.video_id))
        })?;
        let rec = DecodeRecord {
            video_id: item.video_id.clone(),
            caption: vocab.decode(&best.tokens).join(" "),
            log_prob: best.log_prob,
        };
        serde_json::to_writer(&mut file, &rec)?;
        file.write_all(b"\n")?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitEval {
    pub split: String,
    pub metrics: MetricReport,
    /// Mean per-item CIDEr grouped by activity label.
    pub per_activity_cider: BTreeMap<String, f64>,
    pub decode_file: PathBuf,
}

/// Score decoded captions against an evaluation set's references.
pub fn evaluate_split(
    split: &str,
    decodes: &[DecodeRecord],
    items: &[EvalItem],
    decode_file: PathBuf,
) -> Result<SplitEval> {
    let cands: Vec<String> = decodes.iter().map(|d| d.caption.clone()).collect();
    let refs: Vec<Vec<String>> = items.iter().map(|i| i.references.clone()).collect();
    let (metrics, per_item) = evaluate_detailed(&cands, &refs)?;
    let mut grouped: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (item, &score) in items.iter().zip(&per_item) {
        let e = grouped.entry(item.label.clone()).or_insert((0.0, 0));
        e.0 += score;
        e.1 += 1;
    }
    let per_activity_cider = grouped
        .into_iter()
        .map(|(label, (sum, n))| (label, sum / n as f64))
        .collect();
    Ok(SplitEval {
        split: split.to_string(),
        metrics,
        per_activity_cider,
        decode_file,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub model_family: String,
    pub embedding_mode: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_val_cider: f64,
    pub best_epoch: Option<usize>,
    pub train_secs: f64,
    pub vocab_size: usize,
    pub embedding_coverage: f64,
    pub seen: Option<SplitEval>,
    pub unseen: Option<SplitEval>,
}

/// Train one configuration end to end and evaluate the seen and unseen test
/// splits. Artifacts land in `config.out_dir`: best.ckpt, train.log,
/// decode_{seen,unseen}.jsonl, report.json.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    fs::create_dir_all(&config.out_dir)?;
    let data = prepare(config)?;
    let model_cfg = config.model_config()?;
    let schedule = config.schedule()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = stage(
        "build-model",
        Model::with_embeddings(
            model_cfg,
            &data.model_table,
            data.vocab.fingerprint(),
            &mut rng,
        ),
    )?;

    let ckpt_path = config.out_dir.join("best.ckpt");
    let log_path = config.out_dir.join("train.log");
    let outcome: TrainOutcome = stage(
        "train",
        train(
            &mut model,
            &data.vocab,
            &data.train_items,
            &data.val_items,
            &schedule,
            Some(&ckpt_path),
            Some(&log_path),
        ),
    )?;

    // evaluate the best validation checkpoint when one was saved
    let eval_model = if outcome.best_epoch.is_some() && ckpt_path.exists() {
        stage("load-best", load_model(&ckpt_path, Some(data.vocab.fingerprint())))?
    } else {
        save_model(&model, &ckpt_path)?;
        model
    };

    let eval_one = |items: &[EvalItem], name: &str| -> Result<Option<SplitEval>> {
        if items.is_empty() {
            return Ok(None);
        }
        let path = config.out_dir.join(format!("decode_{name}.jsonl"));
        let decodes = stage(
            "decode",
            decode_to_file(
                &eval_model,
                &data.vocab,
                items,
                config.beam_size,
                config.max_caption_len,
                config.length_normalize,
                &path,
            ),
        )?;
        stage("evaluate", evaluate_split(name, &decodes, items, path).map(Some))
    };
    let seen = eval_one(&data.seen_items, "seen")?;
    let unseen = eval_one(&data.unseen_items, "unseen")?;

    let report = ExperimentReport {
        model_family: config.model_family.clone(),
        embedding_mode: config.embedding_mode.clone(),
        seed: config.seed,
        epochs_run: outcome.log.len(),
        best_val_cider: outcome.best_cider,
        best_epoch: outcome.best_epoch,
        train_secs: started.elapsed().as_secs_f64(),
        vocab_size: data.vocab.len(),
        embedding_coverage: data.model_table.coverage,
        seen,
        unseen,
    };
    fs::write(
        config.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// The five feature-ablation variants: video features alone, features plus
/// each topic-embedding half, the topic halves without features, and the
/// full model.
pub fn feature_ablation_variants(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let mk = |name: &str, f: bool, l: bool, t: bool| {
        let mut c = base.clone();
        c.use_video_features = f;
        c.use_label_embedding = l;
        c.use_tfidf_embedding = t;
        c.out_dir = base.out_dir.join(name);
        (name.to_string(), c)
    };
    vec![
        mk("features-only", true, false, false),
        mk("features+label", true, true, false),
        mk("features+tfidf", true, false, true),
        mk("label+tfidf", false, true, true),
        mk("features+label+tfidf", true, true, true),
    ]
}

/// The expert-count grid at a fixed per-layer budget: widening the mixture
/// narrows each expert, with a floor on the expert width.
pub fn expert_grid_variants(
    base: &ExperimentConfig,
    budget: usize,
    min_dim: usize,
) -> Vec<(String, ExperimentConfig)> {
    [1usize, 4, 8, 64]
        .iter()
        .map(|&n| {
            let mut c = base.clone();
            c.model_family = if n == 1 { "topic".into() } else { "tamoe".into() };
            c.expert_count = n;
            c.expert_dim = (budget / n).max(min_dim);
            let name = format!("n{n}_d{}", c.expert_dim);
            c.out_dir = base.out_dir.join(&name);
            (name, c)
        })
        .collect()
}
