//! Optimization: Adadelta, gradient clipping, schedule-sampled teacher
//! forcing, per-epoch shuffling, validation-driven learning-rate halving,
//! and best-checkpoint tracking.

use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_model;
use crate::decoding::greedy_decode;
use crate::error::{Error, Result};
use crate::metrics::{cider, CiderVariant, Corpus};
use crate::model::{BatchGraph, DropoutMaskSet, Model};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;
use crate::text::Vocabulary;
use crate::topic::TopicEmbedding;

/// One training example: a feature sequence paired with one gold caption.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub video_id: String,
    pub label: String,
    pub features: Tensor,
    pub topic: TopicEmbedding,
    /// Content token ids followed by EOS; at most max_caption_len long.
    pub gold: Vec<u32>,
}

/// One evaluation example: a feature sequence with raw reference captions.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub video_id: String,
    pub label: String,
    pub features: Tensor,
    pub topic: TopicEmbedding,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation CIDEr before the LR halves.
    pub patience: usize,
    pub lr_halving: f64,
    /// Teacher-forcing probability: linear from `ss_start` to `ss_floor`
    /// over the epoch budget.
    pub ss_start: f64,
    pub ss_floor: f64,
    /// Global-norm gradient clip; None disables clipping.
    pub clip_norm: Option<f64>,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 64,
            max_epochs: 100,
            patience: 4,
            lr_halving: 0.5,
            ss_start: 1.0,
            ss_floor: 0.75,
            clip_norm: Some(5.0),
            rho: 0.95,
            epsilon: 1e-6,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Domain(
                "batch size, epochs, and patience must be positive".into(),
            ));
        }
        for p in [self.ss_start, self.ss_floor] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!(
                    "sampling probabilities must lie in [0,1], got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn sampling_prob(&self, epoch: usize) -> f64 {
        let span = (self.max_epochs - 1).max(1) as f64;
        let t = (epoch as f64 / span).min(1.0);
        (self.ss_start - (self.ss_start - self.ss_floor) * t).max(self.ss_floor)
    }
}

/// Per-parameter running averages of squared gradients and squared updates.
#[derive(Debug, Clone)]
pub struct AdadeltaState {
    pub rho: f64,
    pub epsilon: f64,
    pub lr_mult: f64,
    grad_avg: Vec<Tensor>,
    update_avg: Vec<Tensor>,
}

impl AdadeltaState {
    pub fn new(store: &ParamStore, rho: f64, epsilon: f64) -> Self {
        let zeros = |_: ()| {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape().to_vec()))
                .collect::<Vec<_>>()
        };
        AdadeltaState {
            rho,
            epsilon,
            lr_mult: 1.0,
            grad_avg: zeros(()),
            update_avg: zeros(()),
        }
    }

    pub fn halve_lr(&mut self, factor: f64) {
        self.lr_mult *= factor;
    }

    /// One Adadelta update from the gradients stored in `store`. Frozen
    /// parameters and fixed rows are untouched; a NaN gradient aborts with
    /// the parameter's name.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let p = store.get_mut(id);
            if p.frozen {
                continue;
            }
            if !p.grad.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in parameter '{name}'"
                )));
            }
            let cols = if p.value.is_matrix() {
                p.value.cols()
            } else {
                usize::MAX
            };
            let eg2 = self.grad_avg[id.0].data_mut();
            let edx2 = self.update_avg[id.0].data_mut();
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                eg2[i] = self.rho * eg2[i] + (1.0 - self.rho) * g * g;
                if cols != usize::MAX && p.fixed_rows.contains(&(i / cols)) {
                    continue;
                }
                let dx = -((edx2[i] + self.epsilon).sqrt() / (eg2[i] + self.epsilon).sqrt())
                    * g
                    * self.lr_mult;
                edx2[i] = self.rho * edx2[i] + (1.0 - self.rho) * dx * dx;
                values[i] += dx;
            }
        }
        Ok(())
    }
}

/// Scale all non-frozen gradients so the global L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-token training cross entropy.
    pub train_loss: f64,
    pub val_cider: f64,
    pub lr_mult: f64,
    pub sampling_prob: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_cider: f64,
    pub best_epoch: Option<usize>,
}

/// Greedy-decode an evaluation set into (candidate strings, references).
pub fn decode_eval_set(
    model: &Model,
    vocab: &Vocabulary,
    items: &[EvalItem],
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut cands = Vec::with_capacity(items.len());
    let mut refs = Vec::with_capacity(items.len());
    for item in items {
        let ids = greedy_decode(model, &item.features, &item.topic)?;
        cands.push(vocab.decode(&ids).join(" "));
        refs.push(item.references.clone());
    }
    Ok((cands, refs))
}

fn validation_cider(model: &Model, vocab: &Vocabulary, items: &[EvalItem]) -> Result<f64> {
    let (cands, refs) = decode_eval_set(model, vocab, items)?;
    let corpus = Corpus::new(&cands, &refs)?;
    Ok(cider(&corpus, CiderVariant::D).mean)
}

/// Run one batch: per-sample masks and teacher forcing, batch-mean loss,
/// backward, accumulate. Returns (nll sum, token count).
fn train_batch(
    model: &mut Model,
    items: &[&TrainItem],
    sampling_prob: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    model.params.zero_grads();
    let mut bg = BatchGraph::new(model);
    let mut losses = Vec::with_capacity(items.len());
    let mut nll = 0.0;
    let mut tokens = 0;
    for item in items {
        let masks = DropoutMaskSet::sample(&model.config, rng);
        let ctx = bg.begin_sequence(&item.features, &item.topic, &masks)?;
        let tf = bg.teacher_forced(&ctx, &item.gold, sampling_prob, rng)?;
        nll += bg.value(tf.loss_sum).item();
        tokens += tf.token_count;
        losses.push(tf.loss_sum);
    }
    let loss = bg.batch_loss(&losses)?;
    let grads = bg.backward_params(loss)?;
    drop(bg);
    for (id, g) in grads {
        model.params.accumulate_grad(id, &g)?;
    }
    Ok((nll, tokens))
}

/// Full training loop. Requires train and validation activity labels to be
/// disjoint (the zero-shot protocol); an empty validation set disables the
/// CIDEr-driven parts (no halving, no checkpoints).
pub fn train(
    model: &mut Model,
    vocab: &Vocabulary,
    train_items: &[TrainItem],
    val_items: &[EvalItem],
    schedule: &TrainSchedule,
    checkpoint_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train_items.is_empty() {
        return Err(Error::Usage("no training items".into()));
    }
    {
        let train_labels: std::collections::BTreeSet<&str> =
            train_items.iter().map(|i| i.label.as_str()).collect();
        if let Some(shared) = val_items
            .iter()
            .find(|i| train_labels.contains(i.label.as_str()))
        {
            return Err(Error::Contract(format!(
                "validation shares activity label '{}' with training",
                shared.label
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut ada = AdadeltaState::new(&model.params, schedule.rho, schedule.epsilon);
    let mut log_file = log_path.map(File::create).transpose()?;
    let mut log = Vec::with_capacity(schedule.max_epochs);
    let mut best = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut stall = 0usize;

    for epoch in 0..schedule.max_epochs {
        let started = Instant::now();
        let sampling_prob = schedule.sampling_prob(epoch);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng);

        let mut nll = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &train_items[i]).collect();
            let (batch_nll, batch_tokens) = train_batch(model, &batch, sampling_prob, &mut rng)?;
            nll += batch_nll;
            tokens += batch_tokens;
            if let Some(max_norm) = schedule.clip_norm {
                clip_gradients(&mut model.params, max_norm);
            }
            ada.step(&mut model.params)?;
        }
        let train_loss = nll / tokens.max(1) as f64;

        let val_cider = if val_items.is_empty() {
            f64::NAN
        } else {
            validation_cider(model, vocab, val_items)?
        };
        if !val_items.is_empty() {
            if val_cider > best {
                best = val_cider;
                best_epoch = Some(epoch);
                stall = 0;
                if let Some(path) = checkpoint_path {
                    save_model(model, path)?;
                }
            } else {
                stall += 1;
                if stall >= schedule.patience {
                    ada.halve_lr(schedule.lr_halving);
                    stall = 0;
                }
            }
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_cider,
            lr_mult: ada.lr_mult,
            sampling_prob,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
        }
        log.push(record);
    }

    Ok(TrainOutcome {
        log,
        best_cider: best,
        best_epoch,
    })
}
