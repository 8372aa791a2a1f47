//! Desk-scale synthetic caption dataset with a real zero-shot structure.
//!
//! Topics come in semantic groups. Every topic owns an exclusive verb and an
//! exclusive object (pseudo-words); subjects, scenes, and caption templates
//! are shared across all topics and encoded in the feature vectors, so they
//! are learnable from paired data and transfer to held-out topics. The
//! exclusive words of held-out topics never appear in training captions:
//! they are reachable only through the topic documents (which mention them
//! heavily) and the synthetic embedding geometry (type/group/identity blocks
//! that make "emit this topic's verb at the verb slot" a linear readout of
//! the topic embedding).

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::{build_split, write_features, DatasetManifest, ManifestRecord, Split};
use crate::numerics::tensor::Tensor;
use crate::topic::{TopicCorpus, TopicRecord};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_topics: usize,
    pub val_topics: usize,
    pub unseen_topics: usize,
    /// Semantic groups; each group has its own caption templates and its own
    /// document vocabulary beyond the per-topic exclusive words.
    pub groups: usize,
    pub templates_per_group: usize,
    pub subject_pool: usize,
    pub scene_pool: usize,
    pub samples_per_topic: usize,
    pub feature_dim: usize,
    pub feature_segments: usize,
    pub embedding_dim: usize,
    /// Additive uniform feature noise amplitude.
    pub noise: f64,
    pub seen_test_ratio: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            train_topics: 12,
            val_topics: 3,
            unseen_topics: 3,
            groups: 3,
            templates_per_group: 2,
            subject_pool: 5,
            scene_pool: 8,
            samples_per_topic: 30,
            feature_dim: 16,
            feature_segments: 6,
            embedding_dim: 32,
            noise: 0.05,
            seen_test_ratio: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_topics == 0 || self.samples_per_topic == 0 {
            return Err(Error::Domain(
                "at least one training topic and one sample per topic".into(),
            ));
        }
        if self.groups == 0
            || self.templates_per_group == 0
            || self.subject_pool == 0
            || self.scene_pool == 0
        {
            return Err(Error::Domain("pools and groups must be non-empty".into()));
        }
        if self.embedding_dim < 16 {
            return Err(Error::Domain(
                "embedding dimension below 16 leaves no room for the identity block".into(),
            ));
        }
        Ok(())
    }

    pub fn total_topics(&self) -> usize {
        self.train_topics + self.val_topics + self.unseen_topics
    }
}

const SUBJECTS: [&str; 8] = [
    "a man", "a woman", "a boy", "a girl", "a person", "a worker", "a kid", "an athlete",
];
const SCENES: [&str; 10] = [
    "park", "kitchen", "garage", "studio", "yard", "street", "gym", "room", "field", "basement",
];
/// Shared filler for topic documents; these occur under every label, so the
/// TF-IDF weighting annihilates them.
const DOC_FILLER: [&str; 12] = [
    "the", "a", "to", "of", "and", "you", "it", "with", "then", "use", "can", "this",
];

/// Per-group caption templates. SUBJ/VERB/OBJ/SCENE are slots; everything
/// else is literal. Word order and function words differ per group so each
/// group has its own style.
fn group_templates(group: usize) -> Vec<&'static str> {
    match group % 3 {
        0 => vec![
            "SUBJ is VERB the OBJ in the SCENE",
            "SUBJ VERB the OBJ near the SCENE",
            "SUBJ is VERB the OBJ again",
        ],
        1 => vec![
            "the OBJ is VERB by SUBJ at the SCENE",
            "at the SCENE SUBJ VERB a OBJ",
            "the OBJ gets VERB by SUBJ slowly",
        ],
        _ => vec![
            "SUBJ starts to VERB the OBJ inside the SCENE",
            "SUBJ keeps VERB the OBJ around the SCENE",
            "SUBJ tries to VERB the OBJ carefully",
        ],
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "do", "fi", "gu", "ke", "lo", "mi", "na", "po", "ru", "se", "ta", "vu", "wa", "zo",
    "cha", "dri", "pla", "sno", "tre",
];

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut Vec<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let w: String = (0..n)
            .map(|_| *SYLLABLES.choose(rng).expect("syllables"))
            .collect();
        if !used.contains(&w) {
            used.push(w.clone());
            return w;
        }
    }
}

struct Topic {
    label: String,
    group: usize,
    verb: String,
    object: String,
}

/// Everything the generator derives from a spec, before any file is written.
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub records: Vec<ManifestRecord>,
    pub features: Vec<(String, Tensor)>,
    pub topic_records: Vec<TopicRecord>,
    /// Word-vector file body (with header line).
    pub embedding_file: String,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    if spec.subject_pool > SUBJECTS.len() || spec.scene_pool > SCENES.len() {
        return Err(Error::Domain(format!(
            "subject pool caps at {}, scene pool at {}",
            SUBJECTS.len(),
            SCENES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // topics, round-robin over groups so every split covers every group
    let mut used_words = Vec::new();
    let topics: Vec<Topic> = (0..spec.total_topics())
        .map(|i| {
            let verb = pseudo_word(&mut rng, &mut used_words);
            let object = pseudo_word(&mut rng, &mut used_words);
            Topic {
                label: format!("{verb} {object}"),
                group: i % spec.groups,
                verb,
                object,
            }
        })
        .collect();
    let group_words: Vec<Vec<String>> = (0..spec.groups)
        .map(|_| (0..3).map(|_| pseudo_word(&mut rng, &mut used_words)).collect())
        .collect();

    let subjects = &SUBJECTS[..spec.subject_pool];
    let scenes = &SCENES[..spec.scene_pool];

    // Global feature codebooks shared by all topics, so held-out topics'
    // features are in-distribution. The template code indexes the template
    // WITHIN a topic's group; the group itself is deliberately absent from
    // the features — rendering the right group style requires the topic
    // embedding, which is the zero-shot transfer channel.
    let seg = spec.feature_segments;
    let d = spec.feature_dim;
    let code = |count: usize, rng: &mut ChaCha8Rng| -> Vec<Tensor> {
        (0..count)
            .map(|_| Tensor::rand_uniform(vec![seg, d], -1.0, 1.0, rng))
            .collect()
    };
    let subj_codes = code(subjects.len(), &mut rng);
    let scene_codes = code(scenes.len(), &mut rng);
    let tpl_codes = code(spec.templates_per_group, &mut rng);

    // captions + features
    let mut records = Vec::new();
    let mut features = Vec::new();
    for (t_idx, topic) in topics.iter().enumerate() {
        let templates = group_templates(topic.group);
        let templates = &templates[..spec.templates_per_group.min(templates.len())];
        for s_idx in 0..spec.samples_per_topic {
            let subj = rng.random_range(0..subjects.len());
            let scene = rng.random_range(0..scenes.len());
            let tpl = rng.random_range(0..templates.len());
            let caption = templates[tpl]
                .replace("SUBJ", subjects[subj])
                .replace("VERB", &topic.verb)
                .replace("OBJ", &topic.object)
                .replace("SCENE", scenes[scene]);
            let mut feat = Tensor::zeros(vec![seg, d]);
            feat.add_in_place(&subj_codes[subj]);
            feat.add_in_place(&scene_codes[scene]);
            feat.add_in_place(&tpl_codes[tpl]);
            if spec.noise > 0.0 {
                let noise = Tensor::rand_uniform(vec![seg, d], -spec.noise, spec.noise, &mut rng);
                feat.add_in_place(&noise);
            }
            let video_id = format!("t{t_idx:02}s{s_idx:03}");
            records.push(ManifestRecord {
                video_id: video_id.clone(),
                activity_label: topic.label.clone(),
                captions: vec![caption],
                feature_path: format!("features/{video_id}.feat"),
                split: Split::Train, // reassigned below
            });
            features.push((video_id, feat));
        }
    }

    // split assignment by topic index order: train, then val, then unseen
    let label_of = |range: std::ops::Range<usize>| -> Vec<String> {
        range.map(|i| topics[i].label.clone()).collect()
    };
    let train_labels = label_of(0..spec.train_topics);
    let val_labels = label_of(spec.train_topics..spec.train_topics + spec.val_topics);
    let unseen_labels = label_of(spec.train_topics + spec.val_topics..spec.total_topics());
    let records = build_split(
        records,
        &train_labels,
        &val_labels,
        &unseen_labels,
        spec.seen_test_ratio,
        spec.seed,
    )?;

    // topic documents: heavy on the exclusive words, moderate on group
    // words, padded with corpus-wide filler (average 2-5 docs per topic).
    // Every document opens with the same stop-word boilerplate, so every
    // filler word occurs under every label and its TF-IDF weight is 0.
    let boilerplate = "to use this you can then with the of a and it";
    let mut topic_records = Vec::new();
    for topic in &topics {
        let n_docs = rng.random_range(2..=5);
        let mut documents = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let len = rng.random_range(30..=60);
            let mut words: Vec<&str> = boilerplate.split(' ').collect();
            for _ in 0..len {
                let roll: f64 = rng.random_range(0.0..1.0);
                let w = if roll < 0.20 {
                    topic.verb.as_str()
                } else if roll < 0.45 {
                    topic.object.as_str()
                } else if roll < 0.60 {
                    group_words[topic.group]
                        .choose(&mut rng)
                        .expect("group words")
                        .as_str()
                } else {
                    DOC_FILLER.choose(&mut rng).expect("filler")
                };
                words.push(w);
            }
            documents.push(words.join(" "));
        }
        topic_records.push(TopicRecord {
            label: topic.label.clone(),
            documents,
        });
    }

    // embedding file: type block + group block + identity block
    let emb = build_embedding_file(spec, &topics, &group_words, subjects, scenes, &mut rng);

    Ok(SyntheticDataset {
        spec: spec.clone(),
        records,
        features,
        topic_records,
        embedding_file: emb,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum WordKind {
    Verb,
    Object,
    GroupWord,
    Shared,
}

/// Embedding layout: dims [0, tb) carry a word-kind code, [tb, tb+gb) a
/// group code (zero for shared words), the rest a per-word identity vector.
/// Same-kind same-group words are near one another; identities keep them
/// separable through the reverse embedding.
fn build_embedding_file(
    spec: &SyntheticSpec,
    topics: &[Topic],
    group_words: &[Vec<String>],
    subjects: &[&str],
    scenes: &[&str],
    rng: &mut ChaCha8Rng,
) -> String {
    let d = spec.embedding_dim;
    let type_block = 4.min(d / 4);
    let group_block = 4.min(d / 4);
    let id_block = d - type_block - group_block;

    let unit = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        v.iter_mut().for_each(|x| *x /= norm);
        v
    };
    let type_codes: Vec<Vec<f64>> = (0..4).map(|_| unit(type_block, rng)).collect();
    let group_codes: Vec<Vec<f64>> = (0..spec.groups).map(|_| unit(group_block, rng)).collect();

    // collect (word, kind, group) in a deterministic order
    let mut words: Vec<(String, WordKind, Option<usize>)> = Vec::new();
    for t in topics {
        words.push((t.verb.clone(), WordKind::Verb, Some(t.group)));
        words.push((t.object.clone(), WordKind::Object, Some(t.group)));
    }
    for (g, ws) in group_words.iter().enumerate() {
        for w in ws {
            words.push((w.clone(), WordKind::GroupWord, Some(g)));
        }
    }
    let mut shared: Vec<String> = Vec::new();
    let push_shared = |text: &str, shared: &mut Vec<String>| {
        for tok in crate::text::tokenize(text) {
            if !shared.contains(&tok) {
                shared.push(tok);
            }
        }
    };
    for s in subjects {
        push_shared(s, &mut shared);
    }
    for s in scenes {
        push_shared(s, &mut shared);
    }
    for g in 0..spec.groups {
        for t in group_templates(g) {
            for tok in t.split(' ') {
                if tok.chars().all(|c| c.is_lowercase()) {
                    push_shared(tok, &mut shared);
                }
            }
        }
    }
    for f in DOC_FILLER {
        push_shared(f, &mut shared);
    }
    for w in shared {
        words.push((w, WordKind::Shared, None));
    }

    let type_weight = 0.6;
    let group_weight = 0.6;
    let mut lines = vec![format!("{} {}", words.len(), d)];
    for (word, kind, group) in &words {
        let mut v = vec![0.0f64; d];
        let type_idx = match kind {
            WordKind::Verb => 0,
            WordKind::Object => 1,
            WordKind::GroupWord => 2,
            WordKind::Shared => 3,
        };
        for (i, &x) in type_codes[type_idx].iter().enumerate() {
            v[i] = type_weight * x;
        }
        if let Some(g) = group {
            for (i, &x) in group_codes[*g].iter().enumerate() {
                v[type_block + i] = group_weight * x;
            }
        }
        for (i, x) in unit(id_block, rng).into_iter().enumerate() {
            v[type_block + group_block + i] = x;
        }
        let nums: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        lines.push(format!("{word} {}", nums.join(" ")));
    }
    lines.push(String::new());
    lines.join("\n")
}

/// Generate and write a dataset directory: manifest.jsonl, features/,
/// topics.jsonl, embeddings.vec, and the generating spec.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let data = generate(spec)?;
    fs::create_dir_all(out_dir.join("features"))?;
    for (video_id, feat) in &data.features {
        write_features(&out_dir.join(format!("features/{video_id}.feat")), feat)?;
    }
    TopicCorpus::save(&data.topic_records, &out_dir.join("topics.jsonl"))?;
    fs::write(out_dir.join("embeddings.vec"), &data.embedding_file)?;
    fs::write(
        out_dir.join("synthetic_spec.json"),
        serde_json::to_string_pretty(&data.spec)?,
    )?;
    let manifest = DatasetManifest::new(data.records, out_dir.to_path_buf());
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    manifest.validate(true)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use std::collections::BTreeSet;

    #[test]
    fn exclusive_words_never_leak_into_training_captions() {
        let spec = SyntheticSpec::default();
        let data = generate(&spec).unwrap();
        let manifest = DatasetManifest::new(data.records.clone(), ".".into());
        let unseen_labels = manifest.labels_of(Split::UnseenTest);
        let mut unseen_words = BTreeSet::new();
        for label in &unseen_labels {
            for tok in tokenize(label) {
                unseen_words.insert(tok);
            }
        }
        assert_eq!(unseen_words.len(), 2 * spec.unseen_topics);
        for rec in &data.records {
            if rec.split == Split::Train || rec.split == Split::SeenTest {
                for cap in &rec.captions {
                    for tok in tokenize(cap) {
                        assert!(
                            !unseen_words.contains(&tok),
                            "held-out word '{tok}' leaked into a training caption"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn regeneration_is_deterministic() {
        let spec = SyntheticSpec {
            samples_per_topic: 4,
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.embedding_file, b.embedding_file);
        assert_eq!(a.topic_records.len(), b.topic_records.len());
        for (x, y) in a.topic_records.iter().zip(&b.topic_records) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.documents, y.documents);
        }
        for ((id_a, f_a), (id_b, f_b)) in a.features.iter().zip(&b.features) {
            assert_eq!(id_a, id_b);
            assert_eq!(f_a, f_b);
        }
        let mut c = spec.clone();
        c.seed = 1;
        let changed = generate(&c).unwrap();
        assert_ne!(a.embedding_file, changed.embedding_file);
    }

    #[test]
    fn written_dataset_passes_validation_and_round_trips() {
        let spec = SyntheticSpec {
            samples_per_topic: 3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_synthetic(&spec, dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 18 * 3);
        let loaded = DatasetManifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        loaded.validate(true).unwrap();
        let corpus = TopicCorpus::load(&dir.path().join("topics.jsonl")).unwrap();
        assert_eq!(corpus.label_count(), 18);
        assert!(corpus.documentless_labels().is_empty());
    }

    #[test]
    fn noiseless_single_topic_single_template_is_constant() {
        let spec = SyntheticSpec {
            train_topics: 1,
            val_topics: 0,
            unseen_topics: 0,
            groups: 1,
            templates_per_group: 1,
            subject_pool: 1,
            scene_pool: 1,
            samples_per_topic: 5,
            noise: 0.0,
            seen_test_ratio: 0.0,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        let first_caption = &data.records[0].captions[0];
        let first_feat = &data.features[0].1;
        for (rec, (_, feat)) in data.records.iter().zip(&data.features) {
            assert_eq!(&rec.captions[0], first_caption);
            assert_eq!(feat, first_feat);
        }
    }

    #[test]
    fn documents_emphasize_exclusive_words() {
        let spec = SyntheticSpec::default();
        let data = generate(&spec).unwrap();
        let corpus = TopicCorpus::from_records(&data.topic_records);
        for rec in &data.topic_records {
            let label_words = tokenize(&rec.label);
            let top = corpus.top_k_words(&rec.label, 2).unwrap();
            for (word, weight) in &top {
                assert!(*weight > 0.0);
                assert!(
                    label_words.contains(word),
                    "top word '{word}' of '{}' should be one of its exclusive words",
                    rec.label
                );
            }
        }
    }

    #[test]
    fn filler_words_get_zero_weight() {
        let spec = SyntheticSpec::default();
        let data = generate(&spec).unwrap();
        let corpus = TopicCorpus::from_records(&data.topic_records);
        for rec in data.topic_records.iter().take(3) {
            // "the" appears in every topic's documents
            let w = corpus.tfidf_weight(&rec.label, "the").unwrap();
            assert_eq!(w, 0.0, "corpus-wide filler must be annihilated");
        }
    }
}
