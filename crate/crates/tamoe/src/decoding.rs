//! Greedy and beam-search caption generation.
//!
//! PAD, BOS, and UNK are masked to -inf at every step, so generated captions
//! can only contain content words and the implicit EOS. Scores are sums of
//! per-step log probabilities over the masked (renormalized) distribution;
//! the EOS step's log probability is included for finished hypotheses.

use crate::error::{Error, Result};
use crate::model::{BatchGraph, DropoutMaskSet, Model, SeqCtx, StepState};
use crate::numerics::graph::log_sum_exp;
use crate::numerics::tensor::Tensor;
use crate::text::{BOS, EOS, PAD, UNK};
use crate::topic::TopicEmbedding;

/// One beam-search candidate. `tokens` excludes BOS and EOS; `log_prob`
/// includes the EOS step when `finished`.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Ranking score: raw log probability, or per-step normalized when
    /// length normalization is on. The EOS step counts toward length.
    fn rank_score(&self, length_normalize: bool) -> f64 {
        if length_normalize {
            let steps = self.tokens.len() + usize::from(self.finished);
            self.log_prob / steps.max(1) as f64
        } else {
            self.log_prob
        }
    }
}

/// Log-softmax over logits with PAD/BOS/UNK masked out.
fn masked_log_probs(logits: &Tensor) -> Vec<f64> {
    let mut masked: Vec<f64> = logits.data().to_vec();
    for banned in [PAD, BOS, UNK] {
        masked[banned as usize] = f64::NEG_INFINITY;
    }
    let lse = log_sum_exp(&masked);
    masked.iter().map(|&x| x - lse).collect()
}

struct LiveHyp {
    tokens: Vec<u32>,
    log_prob: f64,
    state: StepState,
}

fn decode_ctx<'m>(
    model: &'m Model,
    features: &Tensor,
    topic: &TopicEmbedding,
) -> Result<(BatchGraph<'m>, SeqCtx)> {
    let mut bg = BatchGraph::new(model);
    let ctx = bg.begin_sequence(features, topic, &DropoutMaskSet::ones(&model.config))?;
    Ok((bg, ctx))
}

/// Argmax decoding: start from BOS, stop at EOS or `max_caption_len`.
pub fn greedy_decode(model: &Model, features: &Tensor, topic: &TopicEmbedding) -> Result<Vec<u32>> {
    let (mut bg, ctx) = decode_ctx(model, features, topic)?;
    let mut state = bg.initial_decoder_state();
    let mut prev = BOS;
    let mut out = Vec::new();
    for _ in 0..model.config.max_caption_len {
        let step = bg.decode_step(&ctx, prev, state)?;
        let lp = masked_log_probs(bg.value(step.logits));
        let best = lp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(i, _)| i as u32)
            .expect("non-empty vocabulary");
        if best == EOS {
            break;
        }
        out.push(best);
        prev = best;
        state = step.state;
    }
    Ok(out)
}

/// Standard beam search over masked log probabilities.
///
/// Finished hypotheses are set aside and compete at the end by total log
/// probability (or per-step score under `length_normalize`). Expansion ties
/// break toward the smaller token id. Returns up to `beam` hypotheses,
/// finished first, padded with unfinished ones when fewer finish.
pub fn beam_search(
    model: &Model,
    features: &Tensor,
    topic: &TopicEmbedding,
    beam: usize,
    max_len: usize,
    length_normalize: bool,
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::Usage("beam size must be at least 1".into()));
    }
    let max_len = max_len.min(model.config.max_caption_len);
    let (mut bg, ctx) = decode_ctx(model, features, topic)?;
    let init = bg.initial_decoder_state();
    let mut live = vec![LiveHyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        // (score, token, hyp index) for every expansion of every live hyp
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        let mut next_states = Vec::with_capacity(live.len());
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let step = bg.decode_step(&ctx, prev, hyp.state)?;
            let lp = masked_log_probs(bg.value(step.logits));
            next_states.push(step.state);
            for (tok, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    candidates.push((hyp.log_prob + l, tok as u32, h));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });

        let mut next_live = Vec::with_capacity(beam);
        for &(score, tok, h) in candidates.iter().take(beam) {
            if tok == EOS {
                finished.push(Hypothesis {
                    tokens: live[h].tokens.clone(),
                    log_prob: score,
                    finished: true,
                });
            } else {
                let mut tokens = live[h].tokens.clone();
                tokens.push(tok);
                next_live.push(LiveHyp {
                    tokens,
                    log_prob: score,
                    state: next_states[h],
                });
            }
        }
        live = next_live;
    }

    finished.sort_by(|a, b| {
        b.rank_score(length_normalize)
            .total_cmp(&a.rank_score(length_normalize))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    let mut unfinished: Vec<Hypothesis> = live
        .into_iter()
        .map(|h| Hypothesis {
            tokens: h.tokens,
            log_prob: h.log_prob,
            finished: false,
        })
        .collect();
    unfinished.sort_by(|a, b| {
        b.rank_score(length_normalize)
            .total_cmp(&a.rank_score(length_normalize))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    finished.extend(unfinished);
    finished.truncate(beam);
    Ok(finished)
}

/// Independent re-scoring of a token sequence under the same masking that
/// decoding uses. `finished` adds the EOS step.
pub fn score_sequence(
    model: &Model,
    features: &Tensor,
    topic: &TopicEmbedding,
    tokens: &[u32],
    finished: bool,
) -> Result<f64> {
    let (mut bg, ctx) = decode_ctx(model, features, topic)?;
    let mut state = bg.initial_decoder_state();
    let mut prev = BOS;
    let mut total = 0.0;
    let mut targets: Vec<u32> = tokens.to_vec();
    if finished {
        targets.push(EOS);
    }
    for &target in &targets {
        let step = bg.decode_step(&ctx, prev, state)?;
        let lp = masked_log_probs(bg.value(step.logits));
        total += lp[target as usize];
        prev = target;
        state = step.state;
    }
    Ok(total)
}
