//! Command-line surface: dataset generation, vocabulary and topic-embedding
//! inspection, training, decoding, evaluation, gradient certification, and
//! full experiment runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numerical
//! failure.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tamoe::checkpoint::load_model;
use tamoe::error::{Error, Result};
use tamoe::harness::config::ExperimentConfig;
use tamoe::harness::data::{DatasetManifest, Split};
use tamoe::harness::experiment::{decode_to_file, evaluate_split, prepare, run_experiment};
use tamoe::harness::synthetic::{gen_synthetic, SyntheticSpec};
use tamoe::model::{BatchGraph, DropoutMaskSet, Model, ModelConfig, ModelFamily};
use tamoe::numerics::gradcheck::finite_difference_grad;
use tamoe::numerics::tensor::Tensor;
use tamoe::text::{tokenize, Vocabulary};
use tamoe::topic::{topic_embedding, TopicCorpus, TopicEmbedding};

#[derive(Parser)]
#[command(name = "tamoe", about = "Topic-aware mixture-of-experts captioner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the open vocabulary from training captions plus topic documents.
    BuildVocab(BuildVocabArgs),
    /// Compute per-label topic embeddings and print top TF-IDF words.
    TopicEmbed(TopicEmbedArgs),
    /// Generate a synthetic zero-shot dataset directory.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model per an experiment config (no test decoding).
    Train(ConfigArg),
    /// Decode a split with a trained checkpoint.
    Decode(DecodeArgs),
    /// Score a decode file against a manifest's references.
    Eval(EvalArgs),
    /// Certify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Full experiment: train, decode seen/unseen, evaluate, report.
    Run(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config file (flat TOML key-value).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Dataset directory holding manifest.jsonl and topics.jsonl.
    #[arg(long)]
    dataset_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Write the token list (one per line, id order) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopicEmbedArgs {
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Word-vector file; defaults to embeddings.vec inside the dataset.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    dim: usize,
    /// How many top TF-IDF words to print per label.
    #[arg(long, default_value_t = 4)]
    top_k: usize,
    /// Write {label, vector} JSON lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    samples_per_topic: usize,
    /// Full generator spec as JSON; overrides the flags above.
    #[arg(long)]
    spec_json: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which split to decode: train, val, seen-test, unseen-test.
    #[arg(long, default_value = "unseen-test")]
    split: String,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 32)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Decode file: one {video_id, caption, log_prob} JSON record per line.
    #[arg(long)]
    decode: PathBuf,
    #[arg(long)]
    dataset_dir: PathBuf,
    #[arg(long, default_value = "unseen-test")]
    split: String,
    /// Write the full score report here (otherwise stdout only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Finite-difference step.
    #[arg(long, default_value_t = 2e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 10)]
    seed: u64,
}

fn load_corpora(dataset_dir: &PathBuf) -> Result<(DatasetManifest, TopicCorpus)> {
    let manifest = DatasetManifest::load(&dataset_dir.join("manifest.jsonl"))?;
    let corpus = TopicCorpus::load(&dataset_dir.join("topics.jsonl"))?;
    Ok((manifest, corpus))
}

fn build_vocab_cmd(args: BuildVocabArgs) -> Result<()> {
    let (manifest, corpus) = load_corpora(&args.dataset_dir)?;
    let mut train_seqs = Vec::new();
    for rec in manifest.split_records(Split::Train) {
        for cap in &rec.captions {
            train_seqs.push(tokenize(cap));
        }
    }
    let topic_seqs = corpus.token_sequences();
    let vocab = Vocabulary::build(&[&train_seqs, &topic_seqs], args.min_count);
    println!(
        "vocabulary: {} tokens ({} reserved), fingerprint {:#018x}",
        vocab.len(),
        tamoe::text::RESERVED.len(),
        vocab.fingerprint()
    );
    if let Some(out) = args.out {
        let mut body = String::new();
        for id in 0..vocab.len() as u32 {
            body.push_str(vocab.token(id));
            body.push('\n');
        }
        std::fs::write(&out, body)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn topic_embed_cmd(args: TopicEmbedArgs) -> Result<()> {
    let (manifest, corpus) = load_corpora(&args.dataset_dir)?;
    let mut train_seqs = Vec::new();
    for rec in manifest.split_records(Split::Train) {
        for cap in &rec.captions {
            train_seqs.push(tokenize(cap));
        }
    }
    let topic_seqs = corpus.token_sequences();
    let vocab = Vocabulary::build(&[&train_seqs, &topic_seqs], 1);
    let emb_path = args
        .embeddings
        .unwrap_or_else(|| args.dataset_dir.join("embeddings.vec"));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let table = tamoe::text::load_embeddings(
        &emb_path,
        &vocab,
        tamoe::text::EmbeddingMode::PretrainedFrozen,
        args.dim,
        &mut rng,
    )?;
    println!("embedding coverage: {:.1}%", table.coverage * 100.0);

    let mut out_file = args.out.map(std::fs::File::create).transpose()?;
    for warn in corpus.documentless_labels() {
        eprintln!("warning: label '{warn}' has no documents; its TF-IDF half is zero");
    }
    for label in corpus.labels() {
        let top = corpus.top_k_words(label, args.top_k)?;
        let words: Vec<String> = top
            .iter()
            .map(|(w, g)| format!("{w} ({g:.4})"))
            .collect();
        println!("{label}: {}", words.join(", "));
        let emb = topic_embedding(label, &corpus, &vocab, &table)?;
        if let Some(f) = out_file.as_mut() {
            use std::io::Write;
            let rec = serde_json::json!({
                "label": label,
                "vector": emb.vector.data(),
                "tfidf_zeroed": emb.tfidf_zeroed,
            });
            serde_json::to_writer(&mut *f, &rec)?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn gen_synthetic_cmd(args: GenSyntheticArgs) -> Result<()> {
    let spec = match args.spec_json {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text)?
        }
        None => SyntheticSpec {
            seed: args.seed,
            samples_per_topic: args.samples_per_topic,
            ..Default::default()
        },
    };
    let manifest = gen_synthetic(&spec, &args.out_dir)?;
    let mut by_split: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &manifest.records {
        *by_split.entry(rec.split.to_string()).or_insert(0) += 1;
    }
    println!("generated {} videos in {}", manifest.records.len(), args.out_dir.display());
    for (split, n) in by_split {
        println!("  {split}: {n}");
    }
    Ok(())
}

fn train_cmd(args: ConfigArg) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let data = prepare(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::with_embeddings(
        config.model_config()?,
        &data.model_table,
        data.vocab.fingerprint(),
        &mut rng,
    )?;
    let outcome = tamoe::training::train(
        &mut model,
        &data.vocab,
        &data.train_items,
        &data.val_items,
        &config.schedule()?,
        Some(&config.out_dir.join("best.ckpt")),
        Some(&config.out_dir.join("train.log")),
    )?;
    println!(
        "trained {} epochs; best val CIDEr {:.2} at epoch {:?}",
        outcome.log.len(),
        outcome.best_cider,
        outcome.best_epoch
    );
    if outcome.best_epoch.is_none() {
        tamoe::checkpoint::save_model(&model, &config.out_dir.join("best.ckpt"))?;
    }
    println!("checkpoint: {}", config.out_dir.join("best.ckpt").display());
    Ok(())
}

fn decode_cmd(args: DecodeArgs) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let split: Split = args.split.parse()?;
    let data = prepare(&config)?;
    let model = load_model(&args.checkpoint, Some(data.vocab.fingerprint()))?;
    let items = match split {
        Split::Val => &data.val_items,
        Split::SeenTest => &data.seen_items,
        Split::UnseenTest => &data.unseen_items,
        Split::Train => {
            return Err(Error::Usage(
                "decoding the training split is not supported; use val or a test split".into(),
            ))
        }
    };
    let records = decode_to_file(
        &model,
        &data.vocab,
        items,
        args.beam,
        args.max_len,
        config.length_normalize,
        &args.out,
    )?;
    println!("decoded {} videos to {}", records.len(), args.out.display());
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let (manifest, _) = load_corpora(&args.dataset_dir)?;
    let split: Split = args.split.parse()?;
    let mut captions: BTreeMap<String, (String, f64)> = BTreeMap::new();
    let file = std::fs::File::open(&args.decode)?;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: args.decode.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let id = v["video_id"].as_str().unwrap_or_default().to_string();
        let cap = v["caption"].as_str().unwrap_or_default().to_string();
        let lp = v["log_prob"].as_f64().unwrap_or(0.0);
        captions.insert(id, (cap, lp));
    }
    let mut decodes = Vec::new();
    let mut items = Vec::new();
    for rec in manifest.split_records(split) {
        let Some((caption, log_prob)) = captions.get(&rec.video_id) else {
            return Err(Error::Contract(format!(
                "decode file has no caption for video '{}'",
                rec.video_id
            )));
        };
        decodes.push(tamoe::harness::experiment::DecodeRecord {
            video_id: rec.video_id.clone(),
            caption: caption.clone(),
            log_prob: *log_prob,
        });
        items.push(tamoe::training::EvalItem {
            video_id: rec.video_id.clone(),
            label: rec.activity_label.clone(),
            features: Tensor::zeros(vec![1, 1]),
            topic: TopicEmbedding::zero(1),
            references: rec.captions.clone(),
        });
    }
    if items.is_empty() {
        return Err(Error::Usage(format!("split '{split}' has no videos")));
    }
    let eval = evaluate_split(&split.to_string(), &decodes, &items, args.decode.clone())?;
    let text = serde_json::to_string_pretty(&eval)?;
    println!("{text}");
    if let Some(out) = args.out {
        std::fs::write(&out, text)?;
    }
    Ok(())
}

/// End-to-end finite-difference certification on the standard tiny
/// configuration (vocab 20, enc 8, dec 16, emb 12, 2 experts, 3 features,
/// 4 gold tokens), per-token loss, all non-frozen parameters.
fn gradcheck_cmd(args: GradcheckArgs) -> Result<()> {
    let cfg = ModelConfig {
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
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut model = Model::new(cfg.clone(), 20, 1, &mut rng)?;
    let feats = Tensor::rand_uniform(vec![3, 6], -1.0, 1.0, &mut rng);
    let topic = TopicEmbedding {
        vector: Tensor::rand_uniform(vec![24], -1.0, 1.0, &mut rng),
        tfidf_zeroed: false,
    };
    let masks = DropoutMaskSet::sample(&cfg, &mut rng);
    let gold = [5u32, 11, 7, 2];

    let ids = model.ids.clone();
    let config = model.config.clone();
    let vocab_size = model.vocab_size;
    let loss_of = |params: &tamoe::numerics::params::ParamStore| -> Result<f64> {
        let shell = Model {
            config: config.clone(),
            params: params.clone(),
            ids: ids.clone(),
            vocab_size,
            vocab_fingerprint: 1,
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut bg = BatchGraph::new(&shell);
        let ctx = bg.begin_sequence(&feats, &topic, &masks)?;
        let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut r)?;
        let mean = bg.token_mean_loss(std::slice::from_ref(&tf))?;
        Ok(bg.value(mean).item())
    };

    // analytic gradients
    let mut bg = BatchGraph::new(&model);
    let ctx = bg.begin_sequence(&feats, &topic, &masks)?;
    let tf = bg.teacher_forced(&ctx, &gold, 1.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mean = bg.token_mean_loss(std::slice::from_ref(&tf))?;
    let grads = bg.backward_params(mean)?;
    drop(bg);
    model.params.zero_grads();
    for (id, g) in grads {
        model.params.accumulate_grad(id, &g)?;
    }

    let report = finite_difference_grad(
        &mut |s| loss_of(s),
        &mut model.params,
        args.epsilon,
        args.tolerance,
    )?;
    for (name, err) in &report.per_param {
        println!("{name:16} max rel err {err:.3e}");
    }
    println!(
        "checked {} entries; max rel err {:.3e} (tolerance {:.1e})",
        report.entries_checked, report.max_rel_err, report.tolerance
    );
    if report.pass {
        println!("PASS");
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max rel err {:.3e} >= {:.1e}",
            report.max_rel_err, report.tolerance
        )))
    }
}

fn run_cmd(args: ConfigArg) -> Result<()> {
    let config = ExperimentConfig::load(&args.config)?;
    let report = run_experiment(&config)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; help/version requests are success
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::BuildVocab(args) => build_vocab_cmd(args),
        Command::TopicEmbed(args) => topic_embed_cmd(args),
        Command::GenSynthetic(args) => gen_synthetic_cmd(args),
        Command::Train(args) => train_cmd(args),
        Command::Decode(args) => decode_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
        Command::Run(args) => run_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
