//! Corpus-level BLEU-1..4, ROUGE-L, and CIDEr-D with a per-n breakdown.
//!
//! Candidates and references are tokenized with the crate's own tokenizer so
//! scoring is consistent with training. CIDEr document frequencies come from
//! the evaluation corpus's reference sets themselves, which makes scores
//! split-dependent (the standard behavior for this metric family).

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const CIDER_SIGMA: f64 = 6.0;
const NGRAM_MAX: usize = 4;

#[derive(Debug, Clone, serde::Serialize)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    /// Mean of cider_n[0..4].
    pub cider: f64,
    pub cider_n: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CiderVariant {
    /// Count clipping, Gaussian length penalty, x10 scaling.
    D,
    /// No clipping, no length penalty (still x10 for comparable ranges).
    Plain,
}

/// Tokenized candidate/reference pairs.
pub struct Corpus {
    items: Vec<(Vec<String>, Vec<Vec<String>>)>,
}

impl Corpus {
    pub fn new(candidates: &[String], references: &[Vec<String>]) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Usage("empty candidate set".into()));
        }
        if candidates.len() != references.len() {
            return Err(Error::Contract(format!(
                "{} candidates vs {} reference sets",
                candidates.len(),
                references.len()
            )));
        }
        let mut items = Vec::with_capacity(candidates.len());
        for (c, refs) in candidates.iter().zip(references) {
            if refs.is_empty() {
                return Err(Error::Contract(format!(
                    "candidate '{c}' has no references"
                )));
            }
            items.push((tokenize(c), refs.iter().map(|r| tokenize(r)).collect()));
        }
        Ok(Corpus { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

type Ngram = Vec<String>;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram precision and brevity penalty. The
/// reference length r uses the shortest reference per candidate. Returns
/// BLEU-1..BLEU-n_max. Without smoothing, any zero precision zeroes the
/// score at that order and above; with smoothing, orders above unigram get
/// add-one counts (Lin & Och method 2) when unsmoothed counts are zero.
pub fn bleu(corpus: &Corpus, n_max: usize, smoothing: bool) -> Vec<f64> {
    let mut correct = vec![0u64; n_max];
    let mut total = vec![0u64; n_max];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;

    for (cand, refs) in &corpus.items {
        cand_len += cand.len();
        ref_len += refs.iter().map(|r| r.len()).min().unwrap_or(0);
        for n in 1..=n_max {
            let cc = ngram_counts(cand, n);
            let mut max_ref: HashMap<&Ngram, u64> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let key = cc.keys().find(|k| **k == g);
                    if let Some(key) = key {
                        let e = max_ref.entry(key).or_insert(0);
                        *e = (*e).max(c);
                    }
                }
            }
            for (g, c) in &cc {
                total[n - 1] += c;
                correct[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }

    let bp = if cand_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0)
    };

    let precision = |n: usize| -> f64 {
        let (mut c, mut t) = (correct[n - 1] as f64, total[n - 1] as f64);
        if smoothing && n > 1 && correct[n - 1] == 0 {
            c += 1.0;
            t += 1.0;
        }
        if t == 0.0 {
            0.0
        } else {
            c / t
        }
    };

    (1..=n_max)
        .map(|k| {
            let mut log_sum = 0.0;
            for n in 1..=k {
                let p = precision(n);
                if p == 0.0 {
                    return 0.0;
                }
                log_sum += p.ln();
            }
            bp * (log_sum / k as f64).exp()
        })
        .collect()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure with beta = 1.2: max over references per candidate,
/// mean over the corpus.
pub fn rouge_l(corpus: &Corpus) -> f64 {
    const BETA: f64 = 1.2;
    let mut sum = 0.0;
    for (cand, refs) in &corpus.items {
        let mut best: f64 = 0.0;
        for r in refs {
            if cand.is_empty() || r.is_empty() {
                continue;
            }
            let lcs = lcs_len(cand, r) as f64;
            let p = lcs / cand.len() as f64;
            let rec = lcs / r.len() as f64;
            if p > 0.0 && rec > 0.0 {
                let f = (1.0 + BETA * BETA) * p * rec / (rec + BETA * BETA * p);
                best = best.max(f);
            }
        }
        sum += best;
    }
    sum / corpus.items.len() as f64
}

#[derive(Debug, Clone)]
pub struct CiderScores {
    pub mean: f64,
    pub per_n: [f64; 4],
    /// Per-item mean-over-n scores, for per-activity breakdowns.
    pub per_item: Vec<f64>,
    /// True when the corpus has fewer than two images, making every IDF 0.
    pub degenerate_idf: bool,
}

struct TfidfVec {
    weights: [HashMap<Ngram, f64>; 4],
    norms: [f64; 4],
    len: usize,
}

/// CIDEr with document frequencies taken over the reference sets of this
/// corpus (counted once per image) and IDF = ln(#images) - ln(max(1, df)).
pub fn cider(corpus: &Corpus, variant: CiderVariant) -> CiderScores {
    let n_images = corpus.items.len();
    let degenerate_idf = n_images < 2;
    if degenerate_idf {
        eprintln!(
            "warning: CIDEr over {n_images} image(s); document frequencies are degenerate and every IDF is 0"
        );
    }

    // document frequency: once per image, over references only
    let mut df: HashMap<Ngram, u64> = HashMap::new();
    for (_, refs) in &corpus.items {
        let mut seen: HashMap<Ngram, ()> = HashMap::new();
        for r in refs {
            for n in 1..=NGRAM_MAX {
                for g in ngram_counts(r, n).into_keys() {
                    seen.entry(g).or_insert(());
                }
            }
        }
        for g in seen.into_keys() {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_images = (n_images as f64).ln();

    let vectorize = |tokens: &[String]| -> TfidfVec {
        let mut weights: [HashMap<Ngram, f64>; 4] = Default::default();
        let mut norms = [0.0f64; 4];
        for n in 1..=NGRAM_MAX {
            for (g, c) in ngram_counts(tokens, n) {
                let idf = log_images - (df.get(&g).copied().unwrap_or(0).max(1) as f64).ln();
                let w = c as f64 * idf;
                norms[n - 1] += w * w;
                weights[n - 1].insert(g, w);
            }
        }
        for n in &mut norms {
            *n = n.sqrt();
        }
        TfidfVec {
            weights,
            norms,
            len: tokens.len(),
        }
    };

    let mut per_item = Vec::with_capacity(n_images);
    let mut per_n_sum = [0.0f64; 4];
    for (cand, refs) in &corpus.items {
        let cv = vectorize(cand);
        let mut val = [0.0f64; 4];
        for r in refs {
            let rv = vectorize(r);
            let delta = cv.len as f64 - rv.len as f64;
            let penalty = match variant {
                CiderVariant::D => (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp(),
                CiderVariant::Plain => 1.0,
            };
            for n in 0..NGRAM_MAX {
                let mut dot = 0.0;
                for (g, &cw) in &cv.weights[n] {
                    if let Some(&rw) = rv.weights[n].get(g) {
                        let c_side = match variant {
                            CiderVariant::D => cw.min(rw),
                            CiderVariant::Plain => cw,
                        };
                        dot += c_side * rw;
                    }
                }
                if cv.norms[n] > 0.0 && rv.norms[n] > 0.0 {
                    dot /= cv.norms[n] * rv.norms[n];
                } else {
                    dot = 0.0;
                }
                val[n] += dot * penalty;
            }
        }
        let nr = refs.len() as f64;
        let item_n: Vec<f64> = val.iter().map(|v| 10.0 * v / nr).collect();
        for n in 0..NGRAM_MAX {
            per_n_sum[n] += item_n[n];
        }
        per_item.push(item_n.iter().sum::<f64>() / NGRAM_MAX as f64);
    }

    let mut per_n = [0.0f64; 4];
    for n in 0..NGRAM_MAX {
        per_n[n] = per_n_sum[n] / n_images as f64;
    }
    let mean = per_n.iter().sum::<f64>() / NGRAM_MAX as f64;
    CiderScores {
        mean,
        per_n,
        per_item,
        degenerate_idf,
    }
}

/// All metrics over one corpus.
pub fn evaluate(candidates: &[String], references: &[Vec<String>]) -> Result<MetricReport> {
    Ok(evaluate_detailed(candidates, references)?.0)
}

/// Metrics plus per-item CIDEr (for per-activity tables).
pub fn evaluate_detailed(
    candidates: &[String],
    references: &[Vec<String>],
) -> Result<(MetricReport, Vec<f64>)> {
    let corpus = Corpus::new(candidates, references)?;
    let b = bleu(&corpus, 4, false);
    let r = rouge_l(&corpus);
    let c = cider(&corpus, CiderVariant::D);
    Ok((
        MetricReport {
            bleu: [b[0], b[1], b[2], b[3]],
            rouge_l: r,
            cider: c.mean,
            cider_n: c.per_n,
        },
        c.per_item,
    ))
}
