//! Per-topic embeddings from external document corpora.
//!
//! For each activity label y with documents D_y, a unigram x_k gets weight
//!
//!   g_k(y) = (z_k(y) / sum_l z_l(y)) * ln(|Y| / sum_{y'} min(1, z_k(y')))
//!
//! where z_k(y) counts occurrences of x_k across D_y. The term-frequency
//! factor favors words frequent within the topic; the IDF factor zeroes
//! words that occur under every label, which is what suppresses stop words
//! without any explicit stop list. The TF-IDF embedding is the g-weighted
//! sum of word vectors over the distinct unigrams of D_y, and the topic
//! embedding is that vector concatenated after the average embedding of the
//! label's own words (dimension 2D).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::text::{tokenize, EmbeddingTable, Vocabulary};

/// One label's external documents, as raw text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicRecord {
    pub label: String,
    pub documents: Vec<String>,
}

/// Tokenized topic documents with per-label unigram counts.
#[derive(Debug, Clone)]
pub struct TopicCorpus {
    labels: Vec<String>,
    /// Tokenized documents per label, parallel to `labels`.
    docs: Vec<Vec<Vec<String>>>,
    /// z_k(y): occurrences of token k across all documents of label y.
    counts: Vec<BTreeMap<String, u64>>,
    /// Total token count per label (denominator of the TF factor).
    totals: Vec<u64>,
}

impl TopicCorpus {
    pub fn from_records(records: &[TopicRecord]) -> Self {
        let mut labels = Vec::with_capacity(records.len());
        let mut docs = Vec::with_capacity(records.len());
        let mut counts = Vec::with_capacity(records.len());
        let mut totals = Vec::with_capacity(records.len());
        for rec in records {
            let tokenized: Vec<Vec<String>> =
                rec.documents.iter().map(|d| tokenize(d)).collect();
            let mut z: BTreeMap<String, u64> = BTreeMap::new();
            let mut total = 0u64;
            for doc in &tokenized {
                for tok in doc {
                    *z.entry(tok.clone()).or_insert(0) += 1;
                    total += 1;
                }
            }
            labels.push(rec.label.clone());
            docs.push(tokenized);
            counts.push(z);
            totals.push(total);
        }
        TopicCorpus {
            labels,
            docs,
            counts,
            totals,
        }
    }

    /// One JSON record per line: {"label": ..., "documents": [...]}.
    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TopicRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(&records))
    }

    pub fn save(records: &[TopicRecord], path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        for rec in records {
            serde_json::to_writer(&mut f, rec)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// All tokenized documents plus the tokenized labels themselves, for
    /// vocabulary construction over the external corpus.
    pub fn token_sequences(&self) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = self.labels.iter().map(|l| tokenize(l)).collect();
        for docs in &self.docs {
            out.extend(docs.iter().cloned());
        }
        out
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Contract(format!("unknown topic label '{label}'")))
    }

    pub fn has_documents(&self, label: &str) -> bool {
        self.index(label)
            .map(|i| !self.docs[i].is_empty())
            .unwrap_or(false)
    }

    /// Labels carrying zero documents (flagged, not dropped).
    pub fn documentless_labels(&self) -> Vec<&str> {
        self.labels
            .iter()
            .zip(&self.docs)
            .filter(|(_, d)| d.is_empty())
            .map(|(l, _)| l.as_str())
            .collect()
    }

    /// z_k(y): occurrences of `token` across the documents of `label`.
    pub fn count(&self, label: &str, token: &str) -> Result<u64> {
        let i = self.index(label)?;
        Ok(self.counts[i].get(token).copied().unwrap_or(0))
    }

    /// Number of labels whose documents contain `token` at least once.
    fn label_frequency(&self, token: &str) -> u64 {
        self.counts
            .iter()
            .map(|z| u64::from(z.get(token).is_some_and(|&c| c > 0)))
            .sum()
    }

    /// Topic-aware TF-IDF weight g_k(y). Zero when the token never occurs
    /// under the label, and zero when it occurs under every label.
    pub fn tfidf_weight(&self, label: &str, token: &str) -> Result<f64> {
        let i = self.index(label)?;
        let z = self.counts[i].get(token).copied().unwrap_or(0);
        if z == 0 {
            return Ok(0.0);
        }
        let tf = z as f64 / self.totals[i] as f64;
        let idf = ((self.label_count() as f64) / (self.label_frequency(token) as f64)).ln();
        Ok(tf * idf)
    }

    /// Distinct unigrams of D_y with their weights, iteration order sorted
    /// by token so downstream sums are deterministic.
    pub fn weights_for(&self, label: &str) -> Result<Vec<(&str, f64)>> {
        let i = self.index(label)?;
        self.counts[i]
            .keys()
            .map(|tok| Ok((tok.as_str(), self.tfidf_weight(label, tok)?)))
            .collect()
    }

    /// The k distinct unigrams of D_y with the largest weights, descending;
    /// ties broken lexicographically. Shorter if fewer distinct tokens exist.
    pub fn top_k_words(&self, label: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let mut weighted: Vec<(String, f64)> = self
            .weights_for(label)?
            .into_iter()
            .map(|(t, w)| (t.to_string(), w))
            .collect();
        weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        weighted.truncate(k);
        Ok(weighted)
    }
}

/// TF-IDF embedding of Eq-style weighted word vectors over the distinct
/// unigrams of the label's documents.
pub fn tfidf_embedding(
    corpus: &TopicCorpus,
    label: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<Tensor> {
    if !corpus.has_documents(label) {
        return Err(Error::Contract(format!(
            "label '{label}' has no topic documents"
        )));
    }
    let mut out = vec![0.0; table.dim];
    for (token, w) in corpus.weights_for(label)? {
        if w == 0.0 {
            continue;
        }
        let row = table.row(vocab.id(token));
        for (o, &x) in out.iter_mut().zip(row) {
            *o += w * x;
        }
    }
    Tensor::from_vec(vec![table.dim], out)
}

/// Mean embedding of the label's own words (the "average label embedding").
pub fn label_embedding(
    label: &str,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<Tensor> {
    let tokens = tokenize(label);
    if tokens.is_empty() {
        return Err(Error::Usage(format!(
            "label '{label}' has no tokenizable words"
        )));
    }
    let mut out = vec![0.0; table.dim];
    for tok in &tokens {
        let row = table.row(vocab.id(tok));
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Tensor::from_vec(vec![table.dim], out)
}

/// 2D-dimensional topic embedding: average label embedding followed by the
/// TF-IDF embedding. `tfidf_zeroed` is set for documentless labels, whose
/// second half falls back to the zero vector.
#[derive(Debug, Clone)]
pub struct TopicEmbedding {
    pub vector: Tensor,
    pub tfidf_zeroed: bool,
}

impl TopicEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// All-zero stand-in used by the no-topic baseline; dimension 2D.
    pub fn zero(dim_each: usize) -> Self {
        TopicEmbedding {
            vector: Tensor::zeros(vec![2 * dim_each]),
            tfidf_zeroed: true,
        }
    }
}

pub fn topic_embedding(
    label: &str,
    corpus: &TopicCorpus,
    vocab: &Vocabulary,
    table: &EmbeddingTable,
) -> Result<TopicEmbedding> {
    let avg = label_embedding(label, vocab, table)?;
    let (tfidf, zeroed) = if corpus.has_documents(label) {
        (tfidf_embedding(corpus, label, vocab, table)?, false)
    } else {
        (Tensor::zeros(vec![table.dim]), true)
    };
    let vector = crate::numerics::tensor::concat(&[&avg, &tfidf], 0)?;
    vector.ensure_finite(&format!("topic embedding for '{label}'"))?;
    Ok(TopicEmbedding {
        vector,
        tfidf_zeroed: zeroed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::init_embeddings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(recs: &[(&str, &[&str])]) -> TopicCorpus {
        let records: Vec<TopicRecord> = recs
            .iter()
            .map(|(l, ds)| TopicRecord {
                label: l.to_string(),
                documents: ds.iter().map(|d| d.to_string()).collect(),
            })
            .collect();
        TopicCorpus::from_records(&records)
    }

    fn vocab_of(c: &TopicCorpus, extra: &[&str]) -> Vocabulary {
        let mut seqs: Vec<Vec<String>> = Vec::new();
        for label in c.labels() {
            seqs.push(tokenize(label));
        }
        for docs in &c.docs {
            for d in docs {
                seqs.push(d.clone());
            }
        }
        for e in extra {
            seqs.push(tokenize(e));
        }
        Vocabulary::build(&[&seqs], 1)
    }

    #[test]
    fn corpus_wide_token_gets_zero_weight() {
        let c = corpus(&[("a", &["ball game"]), ("b", &["ball toy"])]);
        assert_eq!(c.tfidf_weight("a", "ball").unwrap(), 0.0);
        assert!(c.tfidf_weight("a", "game").unwrap() > 0.0);
    }

    #[test]
    fn hand_case_two_labels() {
        // g_knife(A) = (2/3) * ln(2/1)
        let c = corpus(&[("A", &["knife knife stone"]), ("B", &["ball"])]);
        let g = c.tfidf_weight("A", "knife").unwrap();
        let expected = (2.0 / 3.0) * 2.0f64.ln();
        assert!((g - expected).abs() < 1e-12, "g={g} expected={expected}");
        assert!((expected - 0.4620981).abs() < 1e-6);
    }

    #[test]
    fn absent_token_weight_is_zero() {
        let c = corpus(&[("A", &["knife"]), ("B", &["ball"])]);
        assert_eq!(c.tfidf_weight("A", "ball").unwrap(), 0.0);
        assert_eq!(c.tfidf_weight("A", "zebra").unwrap(), 0.0);
    }

    #[test]
    fn tf_factors_sum_to_one_per_label() {
        let c = corpus(&[
            ("A", &["one two two three three three"]),
            ("B", &["four four"]),
        ]);
        for label in ["A", "B"] {
            let i = c.index(label).unwrap();
            let tf_sum: f64 = c.counts[i]
                .values()
                .map(|&z| z as f64 / c.totals[i] as f64)
                .sum();
            assert!((tf_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_documents_leaves_weights_unchanged() {
        let base = corpus(&[("A", &["knife stone knife"]), ("B", &["ball net"])]);
        let doubled = corpus(&[
            ("A", &["knife stone knife", "knife stone knife"]),
            ("B", &["ball net", "ball net"]),
        ]);
        for tok in ["knife", "stone", "ball"] {
            for label in ["A", "B"] {
                let a = base.tfidf_weight(label, tok).unwrap();
                let b = doubled.tfidf_weight(label, tok).unwrap();
                assert!((a - b).abs() < 1e-12, "{label}/{tok}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn tfidf_embedding_single_distinct_token() {
        let c = corpus(&[("A", &["a a"]), ("B", &["b"])]);
        let vocab = vocab_of(&c, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let table = init_embeddings(&vocab, 4, &mut rng);
        let emb = tfidf_embedding(&c, "A", &vocab, &table).unwrap();
        // single distinct token "a" with tf 1.0, idf ln2
        let expected_w = 2.0f64.ln();
        let row = table.row(vocab.id("a"));
        for (e, r) in emb.data().iter().zip(row) {
            assert!((e - expected_w * r).abs() < 1e-12);
        }
    }

    #[test]
    fn all_corpus_wide_tokens_give_zero_vector() {
        let c = corpus(&[("A", &["x y"]), ("B", &["x y"])]);
        let vocab = vocab_of(&c, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let table = init_embeddings(&vocab, 4, &mut rng);
        let emb = tfidf_embedding(&c, "A", &vocab, &table).unwrap();
        assert!(emb.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tfidf_embedding_linear_in_table() {
        let c = corpus(&[("A", &["knife stone"]), ("B", &["ball"])]);
        let vocab = vocab_of(&c, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut table = init_embeddings(&vocab, 3, &mut rng);
        let e1 = tfidf_embedding(&c, "A", &vocab, &table).unwrap();
        table.matrix.scale_in_place(2.5);
        let e2 = tfidf_embedding(&c, "A", &vocab, &table).unwrap();
        for (a, b) in e1.data().iter().zip(e2.data()) {
            assert!((2.5 * a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn topic_embedding_layout_and_dim() {
        let c = corpus(&[("arm wrestling", &["arm strength opponent"]), ("B", &["x"])]);
        let vocab = vocab_of(&c, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let table = init_embeddings(&vocab, 300, &mut rng);
        let emb = topic_embedding("arm wrestling", &c, &vocab, &table).unwrap();
        assert_eq!(emb.dim(), 600);
        // first half = mean of the two label-word rows
        let arm = table.row(vocab.id("arm"));
        let wrestling = table.row(vocab.id("wrestling"));
        for i in 0..300 {
            let want = (arm[i] + wrestling[i]) / 2.0;
            assert!((emb.vector.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn documentless_label_zeroes_tfidf_half() {
        let c = corpus(&[("silent", &[]), ("B", &["x"])]);
        assert_eq!(c.documentless_labels(), vec!["silent"]);
        let vocab = vocab_of(&c, &["silent"]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let table = init_embeddings(&vocab, 5, &mut rng);
        let emb = topic_embedding("silent", &c, &vocab, &table).unwrap();
        assert!(emb.tfidf_zeroed);
        assert!(emb.vector.data()[5..].iter().all(|&x| x == 0.0));
        assert!(tfidf_embedding(&c, "silent", &vocab, &table).is_err());
    }

    #[test]
    fn empty_label_is_input_error() {
        let c = corpus(&[("A", &["x"])]);
        let vocab = vocab_of(&c, &[]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let table = init_embeddings(&vocab, 3, &mut rng);
        assert!(topic_embedding("...", &c, &vocab, &table).is_err());
    }

    #[test]
    fn top_k_ranks_exclusive_token_first() {
        let c = corpus(&[
            ("A", &["common zebra common"]),
            ("B", &["common other"]),
        ]);
        let top = c.top_k_words("A", 2).unwrap();
        assert_eq!(top[0].0, "zebra");
        // "common" appears under every label: weight 0
        assert_eq!(top[1].1, 0.0);
    }

    #[test]
    fn top_k_shorter_when_fewer_tokens() {
        let c = corpus(&[("A", &["only"]), ("B", &["x"])]);
        assert_eq!(c.top_k_words("A", 10).unwrap().len(), 1);
    }

    #[test]
    fn top_k_ties_break_lexicographically() {
        let c = corpus(&[("A", &["bb aa"]), ("B", &["zz"])]);
        let top = c.top_k_words("A", 2).unwrap();
        assert_eq!(top[0].0, "aa");
        assert_eq!(top[1].0, "bb");
    }

    #[test]
    fn jsonl_round_trip() {
        let records = vec![
            TopicRecord {
                label: "sharpening knives".into(),
                documents: vec!["use a stone to sharpen the knife blade".into()],
            },
            TopicRecord {
                label: "arm wrestling".into(),
                documents: vec![],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topics.jsonl");
        TopicCorpus::save(&records, &path).unwrap();
        let loaded = TopicCorpus::load(&path).unwrap();
        assert_eq!(loaded.labels(), &["sharpening knives", "arm wrestling"]);
        assert_eq!(loaded.count("sharpening knives", "stone").unwrap(), 1);
        assert_eq!(loaded.documentless_labels(), vec!["arm wrestling"]);
    }

    #[test]
    fn counts_match_brute_force_recount() {
        let c = corpus(&[
            ("A", &["knife stone knife", "sharpen the knife"]),
            ("B", &["ball ball net"]),
        ]);
        // independent recount straight from the raw docs
        let raw = [
            ("A", vec!["knife stone knife", "sharpen the knife"]),
            ("B", vec!["ball ball net"]),
        ];
        for (label, docs) in &raw {
            let mut manual: BTreeMap<String, u64> = BTreeMap::new();
            for d in docs {
                for tok in tokenize(d) {
                    *manual.entry(tok).or_insert(0) += 1;
                }
            }
            for (tok, &cnt) in &manual {
                assert_eq!(c.count(label, tok).unwrap(), cnt);
            }
        }
    }
}
