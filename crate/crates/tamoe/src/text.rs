//! Tokenization, open-vocabulary construction, and pretrained word-embedding
//! ingestion.
//!
//! The vocabulary is built over the paired training corpus plus the external
//! topic corpus, so words that only ever appear in topic documents still get
//! ids and (pretrained) embedding rows. That is the entire basis for
//! generating out-of-domain words at decode time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercase, split on Unicode whitespace, strip leading/trailing
/// non-alphanumeric characters from each token, drop empties. Internal
/// punctuation (hyphens, apostrophes) is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Token table with reserved ids 0..3 for PAD, BOS, EOS, UNK.
///
/// Id assignment over non-reserved tokens is frequency-descending with
/// lexicographic tie-break, so two builds from the same corpora agree.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Tokens with pooled count >= `min_count` across all corpora enter the
    /// vocabulary, after the four reserved tokens.
    pub fn build(corpora: &[&[Vec<String>]], min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for corpus in corpora {
            for seq in *corpus {
                for tok in seq {
                    *counts.entry(tok.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token; unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn is_reserved(id: u32) -> bool {
        id < RESERVED.len() as u32
    }

    /// FNV-1a over tokens in id order; checkpoints embed this to reject
    /// loading weights against a different vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Rows come from the pretrained file and stay fixed during training
    /// (reserved rows excepted). Missing tokens get uniform[-0.1, 0.1] rows.
    PretrainedFrozen,
    /// All rows sampled uniform[-0.1, 0.1] and trained with the model.
    TaskSpecific,
}

/// |V*| x D embedding matrix tied to a vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub dim: usize,
    pub frozen: bool,
    /// Fraction of non-reserved vocabulary tokens found in the pretrained file.
    pub coverage: f64,
}

impl EmbeddingTable {
    pub fn row(&self, id: u32) -> &[f64] {
        self.matrix.row(id as usize)
    }

    pub fn vocab_size(&self) -> usize {
        self.matrix.rows()
    }
}

/// Parse a word-vector text file: optional "<count> <dim>" header, then one
/// "<token> <v1> ... <vD>" line per word, single-space separated.
///
/// Returns rows for vocabulary tokens only; other words are skipped.
fn read_vector_file(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
) -> Result<HashMap<u32, Vec<f64>>> {
    let display = path.display().to_string();
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
        if lineno == 0 && fields.len() == 2 {
            // header: "<count> <dim>"
            let declared: usize = fields[1].parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_num,
                msg: format!("bad header dimension '{}'", fields[1]),
            })?;
            if declared != dim {
                return Err(Error::Format {
                    path: display,
                    msg: format!("header declares dimension {declared}, expected {dim}"),
                });
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                path: display,
                line: line_num,
                msg: format!("expected 1 token + {dim} floats, got {} fields", fields.len()),
            });
        }
        let token = fields[0];
        if !vocab.contains(token) {
            continue;
        }
        let mut v = Vec::with_capacity(dim);
        for f in &fields[1..] {
            v.push(f.parse::<f64>().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_num,
                msg: format!("bad float '{f}'"),
            })?);
        }
        rows.insert(vocab.id(token), v);
    }
    Ok(rows)
}

/// Load an embedding table for `vocab`.
///
/// Pretrained-frozen mode fills rows from the file, samples missing tokens
/// uniform[-0.1, 0.1], and freezes the table. Task-specific mode samples
/// every row uniform[-0.1, 0.1] and leaves it trainable (the file is still
/// consulted so coverage can be reported). In both modes the PAD row is
/// zero.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    mode: EmbeddingMode,
    dim: usize,
    rng: &mut impl RngExt,
) -> Result<EmbeddingTable> {
    let file_rows = read_vector_file(path, vocab, dim)?;
    build_table(vocab, mode, dim, &file_rows, rng)
}

/// Task-specific table without any pretrained file (coverage 0).
pub fn init_embeddings(
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut impl RngExt,
) -> EmbeddingTable {
    build_table(vocab, EmbeddingMode::TaskSpecific, dim, &HashMap::new(), rng)
        .expect("in-memory build cannot fail")
}

fn build_table(
    vocab: &Vocabulary,
    mode: EmbeddingMode,
    dim: usize,
    file_rows: &HashMap<u32, Vec<f64>>,
    rng: &mut impl RngExt,
) -> Result<EmbeddingTable> {
    let v = vocab.len();
    let mut matrix = Tensor::zeros(vec![v, dim]);
    let mut found = 0usize;
    for id in 0..v as u32 {
        let dst = matrix.row_mut(id as usize);
        let from_file = file_rows.get(&id);
        if from_file.is_some() && !Vocabulary::is_reserved(id) {
            found += 1;
        }
        if id == PAD {
            continue; // PAD row stays zero
        }
        match (mode, from_file) {
            (EmbeddingMode::PretrainedFrozen, Some(row)) => dst.copy_from_slice(row),
            _ => {
                for x in dst.iter_mut() {
                    *x = rng.random_range(-0.1..=0.1);
                }
            }
        }
    }
    let non_reserved = v.saturating_sub(RESERVED.len());
    let coverage = if non_reserved == 0 {
        0.0
    } else {
        found as f64 / non_reserved as f64
    };
    matrix.ensure_finite("embedding table")?;
    Ok(EmbeddingTable {
        matrix,
        dim,
        frozen: mode == EmbeddingMode::PretrainedFrozen,
        coverage,
    })
}
