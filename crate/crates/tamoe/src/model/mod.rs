//! The captioning network: bidirectional LSTM encoder, additive-attention
//! decoder LSTM, topic-gated mixture-of-experts output layer, and a reverse
//! embedding head that maps expert outputs back into vocabulary space.

mod forward;

pub use forward::{BatchGraph, ForwardTrace, SeqCtx, StepOut, StepState, TeacherForcedOut};

use rand::RngExt;

use crate::error::{Error, Result};
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::Tensor;
use crate::text::{EmbeddingTable, RESERVED};

/// Which of the three model variants this instance runs as.
///
/// `Base` zeroes the topic embedding and uses a single expert; `Topic` keeps
/// the topic embedding with a single expert; `Tamoe` adds the gated expert
/// mixture. With one expert the gate is irrelevant, so `Topic` and a
/// one-expert `Tamoe` produce bitwise-identical outputs given shared
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Base,
    Topic,
    Tamoe,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "base" => Ok(ModelFamily::Base),
            "topic" => Ok(ModelFamily::Topic),
            "tamoe" => Ok(ModelFamily::Tamoe),
            other => Err(Error::Usage(format!("unknown model family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub family: ModelFamily,
    /// Dimension of each input feature vector.
    pub feature_dim: usize,
    /// Per-direction encoder LSTM size (outputs are 2x this).
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// Word embedding dimension D; the topic embedding is 2D.
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub expert_count: usize,
    pub expert_dim: usize,
    pub gate_hidden: usize,
    /// Gate softmax temperature.
    pub temperature: f64,
    /// Variational dropout rate on expert outputs and the decoder input.
    pub dropout: f64,
    pub max_features: usize,
    pub max_caption_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::Tamoe,
            feature_dim: 1024,
            encoder_hidden: 512,
            decoder_hidden: 1024,
            embedding_dim: 300,
            attention_dim: 512,
            expert_count: 8,
            expert_dim: 256,
            gate_hidden: 512,
            temperature: 1.0,
            dropout: 0.5,
            max_features: 200,
            max_caption_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.feature_dim,
            self.encoder_hidden,
            self.decoder_hidden,
            self.embedding_dim,
            self.attention_dim,
            self.expert_count,
            self.expert_dim,
            self.gate_hidden,
            self.max_features,
            self.max_caption_len,
        ];
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Domain("all model sizes must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.family != ModelFamily::Tamoe && self.expert_count != 1 {
            return Err(Error::Domain(format!(
                "{:?} family requires a single expert, got {}",
                self.family, self.expert_count
            )));
        }
        Ok(())
    }

    /// Decoder LSTM input: [w_prev || c_t || topic] = D + 2H_e + 2D.
    pub fn decoder_input_dim(&self) -> usize {
        3 * self.embedding_dim + 2 * self.encoder_hidden
    }

    pub fn topic_dim(&self) -> usize {
        2 * self.embedding_dim
    }
}

/// Weight/bias ids of one LSTM direction.
#[derive(Debug, Clone, Copy)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

/// Every parameter of the network, by role.
#[derive(Debug, Clone)]
pub struct ParamIds {
    pub enc_fwd: LstmIds,
    pub enc_bwd: LstmIds,
    pub dec: LstmIds,
    pub attn_wh: ParamId,
    pub attn_we: ParamId,
    pub attn_v: ParamId,
    /// (weight, bias) per expert.
    pub experts: Vec<(ParamId, ParamId)>,
    pub gate_w1: ParamId,
    pub gate_b1: ParamId,
    pub gate_w2: ParamId,
    pub gate_b2: ParamId,
    /// Output projection P: embedding_dim x expert_dim.
    pub proj: ParamId,
    /// Reserved-token embedding rows (PAD/BOS/EOS/UNK); PAD row pinned to 0.
    pub emb_reserved: ParamId,
    /// All other vocabulary rows; frozen in pretrained mode.
    pub emb_words: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ids: ParamIds,
    pub vocab_size: usize,
    pub vocab_fingerprint: u64,
}

const INIT_RANGE: f64 = 0.1;

fn uniform_param(
    store: &mut ParamStore,
    name: &str,
    shape: Vec<usize>,
    rng: &mut impl RngExt,
) -> ParamId {
    store.insert(
        name,
        Tensor::rand_uniform(shape, -INIT_RANGE, INIT_RANGE, rng),
        false,
    )
}

/// LSTM bias with the forget-gate quarter set to 1. Gate layout in the
/// packed preactivation is [input, forget, candidate, output].
fn lstm_bias(hidden: usize, rng: &mut impl RngExt) -> Tensor {
    let mut b = Tensor::rand_uniform(vec![4 * hidden], -INIT_RANGE, INIT_RANGE, rng);
    for x in &mut b.data_mut()[hidden..2 * hidden] {
        *x = 1.0;
    }
    b
}

fn lstm_params(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut impl RngExt,
) -> LstmIds {
    let wx = uniform_param(store, &format!("{prefix}.wx"), vec![4 * hidden, input], rng);
    let wh = uniform_param(store, &format!("{prefix}.wh"), vec![4 * hidden, hidden], rng);
    let b = store.insert(&format!("{prefix}.b"), lstm_bias(hidden, rng), false);
    LstmIds { wx, wh, b }
}

impl Model {
    /// Fresh model with a task-specific (random, trainable) embedding table.
    pub fn new(
        config: ModelConfig,
        vocab_size: usize,
        vocab_fingerprint: u64,
        rng: &mut impl RngExt,
    ) -> Result<Self> {
        Self::build(config, vocab_size, vocab_fingerprint, None, rng)
    }

    /// Fresh model whose embedding rows are copied from a loaded table;
    /// the word rows are frozen when the table is frozen.
    pub fn with_embeddings(
        config: ModelConfig,
        table: &EmbeddingTable,
        vocab_fingerprint: u64,
        rng: &mut impl RngExt,
    ) -> Result<Self> {
        Self::build(
            config,
            table.vocab_size(),
            vocab_fingerprint,
            Some(table),
            rng,
        )
    }

    fn build(
        config: ModelConfig,
        vocab_size: usize,
        vocab_fingerprint: u64,
        table: Option<&EmbeddingTable>,
        rng: &mut impl RngExt,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(t) = table {
            if t.dim != config.embedding_dim {
                return Err(Error::Dim {
                    op: "model embedding",
                    lhs: vec![config.embedding_dim],
                    rhs: vec![t.dim],
                });
            }
        }
        if vocab_size <= RESERVED.len() {
            return Err(Error::Contract(format!(
                "vocabulary of {vocab_size} tokens has no content words"
            )));
        }
        let d = config.embedding_dim;
        let mut store = ParamStore::new();

        let enc_fwd = lstm_params(
            &mut store,
            "enc.fwd",
            config.feature_dim,
            config.encoder_hidden,
            rng,
        );
        let enc_bwd = lstm_params(
            &mut store,
            "enc.bwd",
            config.feature_dim,
            config.encoder_hidden,
            rng,
        );
        let dec = lstm_params(
            &mut store,
            "dec",
            config.decoder_input_dim(),
            config.decoder_hidden,
            rng,
        );
        let attn_wh = uniform_param(
            &mut store,
            "attn.wh",
            vec![config.attention_dim, config.decoder_hidden],
            rng,
        );
        let attn_we = uniform_param(
            &mut store,
            "attn.we",
            vec![config.attention_dim, 2 * config.encoder_hidden],
            rng,
        );
        let attn_v = uniform_param(&mut store, "attn.v", vec![config.attention_dim], rng);

        let experts = (0..config.expert_count)
            .map(|s| {
                let w = uniform_param(
                    &mut store,
                    &format!("expert.{s}.w"),
                    vec![config.expert_dim, config.decoder_hidden],
                    rng,
                );
                let b = uniform_param(&mut store, &format!("expert.{s}.b"), vec![config.expert_dim], rng);
                (w, b)
            })
            .collect();

        let gate_w1 = uniform_param(
            &mut store,
            "gate.w1",
            vec![config.gate_hidden, config.topic_dim()],
            rng,
        );
        let gate_b1 = uniform_param(&mut store, "gate.b1", vec![config.gate_hidden], rng);
        let gate_w2 = uniform_param(
            &mut store,
            "gate.w2",
            vec![config.expert_count, config.gate_hidden],
            rng,
        );
        let gate_b2 = uniform_param(&mut store, "gate.b2", vec![config.expert_count], rng);

        let proj = uniform_param(&mut store, "proj", vec![d, config.expert_dim], rng);

        // Reserved rows are always trainable (BOS/EOS/UNK carry learned
        // signal) except PAD, which is pinned to zero. Word rows follow the
        // embedding mode.
        let n_res = RESERVED.len();
        let mut reserved = Tensor::rand_uniform(vec![n_res, d], -INIT_RANGE, INIT_RANGE, rng);
        reserved.row_mut(0).fill(0.0);
        let mut words = Tensor::rand_uniform(vec![vocab_size - n_res, d], -INIT_RANGE, INIT_RANGE, rng);
        let mut words_frozen = false;
        if let Some(t) = table {
            for r in 0..n_res {
                reserved.row_mut(r).copy_from_slice(t.matrix.row(r));
            }
            for r in n_res..vocab_size {
                words.row_mut(r - n_res).copy_from_slice(t.matrix.row(r));
            }
            words_frozen = t.frozen;
        }
        let emb_reserved = store.insert("emb.reserved", reserved, false);
        store.get_mut(emb_reserved).fixed_rows = vec![0];
        let emb_words = store.insert("emb.words", words, words_frozen);

        Ok(Model {
            config,
            params: store,
            ids: ParamIds {
                enc_fwd,
                enc_bwd,
                dec,
                attn_wh,
                attn_we,
                attn_v,
                experts,
                gate_w1,
                gate_b1,
                gate_w2,
                gate_b2,
                proj,
                emb_reserved,
                emb_words,
            },
            vocab_size,
            vocab_fingerprint,
        })
    }
}

/// Binary dropout masks, sampled once per sequence sample and reused at
/// every time step of that sample.
#[derive(Debug, Clone)]
pub struct DropoutMaskSet {
    /// Mask over the concatenated decoder input.
    pub dec_input: Tensor,
    /// One mask per expert output.
    pub experts: Vec<Tensor>,
    /// The rate the masks were sampled at; 0 means all-ones (inference).
    pub rate: f64,
}

impl DropoutMaskSet {
    pub fn sample(config: &ModelConfig, rng: &mut impl RngExt) -> Self {
        let p = config.dropout;
        let bern = |n: usize, rng: &mut dyn FnMut() -> bool| -> Tensor {
            let data = (0..n).map(|_| if rng() { 1.0 } else { 0.0 }).collect();
            Tensor::from_vec(vec![n], data).expect("mask shape")
        };
        let mut keep = || rng.random_bool(1.0 - p);
        let dec_input = bern(config.decoder_input_dim(), &mut keep);
        let experts = (0..config.expert_count)
            .map(|_| bern(config.expert_dim, &mut keep))
            .collect();
        DropoutMaskSet {
            dec_input,
            experts,
            rate: p,
        }
    }

    /// All-ones masks with no rescaling, for evaluation and decoding.
    pub fn ones(config: &ModelConfig) -> Self {
        DropoutMaskSet {
            dec_input: Tensor::full(vec![config.decoder_input_dim()], 1.0),
            experts: (0..config.expert_count)
                .map(|_| Tensor::full(vec![config.expert_dim], 1.0))
                .collect(),
            rate: 0.0,
        }
    }

    /// Inverted-dropout scaling factor applied alongside the binary mask.
    pub fn scale(&self) -> f64 {
        if self.rate > 0.0 {
            1.0 / (1.0 - self.rate)
        } else {
            1.0
        }
    }
}

/// Small dimensions used across the crate's gradient-certification tests.
#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
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
        dropout: 0.5,
        max_features: 200,
        max_caption_len: 32,
    }
}
