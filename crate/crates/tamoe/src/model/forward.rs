//! Graph construction for the forward pass.
//!
//! A [`BatchGraph`] owns one tape shared by every sequence in a batch, so
//! each parameter is inserted as a leaf exactly once per batch. Sequences
//! are started with [`BatchGraph::begin_sequence`] (encoder + gate run
//! there) and then stepped token by token; teacher-forced training, greedy
//! decoding, and beam search all drive the same step function.

use rand::RngExt;

use crate::error::{Error, Result};
use crate::model::{DropoutMaskSet, Model, ModelFamily};
use crate::numerics::graph::{Graph, VarId};
use crate::numerics::params::ParamId;
use crate::numerics::tensor::Tensor;
use crate::topic::TopicEmbedding;

/// Per-step snapshots used by invariant tests: gate weights, the applied
/// decoder-input mask, and attention weights at each decode step.
#[derive(Debug, Default, Clone)]
pub struct ForwardTrace {
    pub betas: Vec<Vec<f64>>,
    pub dec_masks: Vec<Vec<f64>>,
    pub attn_weights: Vec<Vec<f64>>,
}

/// Handles into the tape for one sequence.
pub struct SeqCtx {
    enc_out: Vec<VarId>,
    /// W_e * h^e_j, hoisted out of the per-step attention loop.
    enc_proj: Vec<VarId>,
    topic: VarId,
    beta: VarId,
    mask_dec: VarId,
    mask_experts: Vec<VarId>,
}

impl SeqCtx {
    pub fn feature_count(&self) -> usize {
        self.enc_out.len()
    }

    pub fn beta(&self) -> VarId {
        self.beta
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepState {
    pub h: VarId,
    pub c: VarId,
}

pub struct StepOut {
    pub state: StepState,
    pub logits: VarId,
    pub attn: VarId,
}

pub struct TeacherForcedOut {
    pub step_logits: Vec<VarId>,
    /// Sum of per-step cross entropies for this sample (PAD steps excluded).
    pub loss_sum: VarId,
    pub token_count: usize,
}

pub struct BatchGraph<'a> {
    model: &'a Model,
    graph: Graph,
    pvars: Vec<Option<VarId>>,
    emb: Option<VarId>,
    trace: Option<ForwardTrace>,
}

impl<'a> BatchGraph<'a> {
    pub fn new(model: &'a Model) -> Self {
        BatchGraph {
            model,
            graph: Graph::new(),
            pvars: vec![None; model.params.len()],
            emb: None,
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(ForwardTrace::default());
    }

    pub fn trace(&self) -> Option<&ForwardTrace> {
        self.trace.as_ref()
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        self.graph.value(v)
    }

    fn p(&mut self, id: ParamId) -> VarId {
        if let Some(v) = self.pvars[id.0] {
            return v;
        }
        let v = self.graph.param(&self.model.params, id);
        self.pvars[id.0] = Some(v);
        v
    }

    /// Full |V*| x D embedding matrix: reserved rows over word rows.
    fn embedding(&mut self) -> Result<VarId> {
        if let Some(v) = self.emb {
            return Ok(v);
        }
        let res = self.p(self.model.ids.emb_reserved);
        let words = self.p(self.model.ids.emb_words);
        let v = self.graph.concat(&[res, words], 0)?;
        self.emb = Some(v);
        Ok(v)
    }

    fn lstm_step(
        &mut self,
        ids: crate::model::LstmIds,
        hidden: usize,
        x: VarId,
        state: StepState,
    ) -> Result<StepState> {
        let wx = self.p(ids.wx);
        let wh = self.p(ids.wh);
        let b = self.p(ids.b);
        let xp = self.graph.matmul(wx, x)?;
        let hp = self.graph.matmul(wh, state.h)?;
        let s = self.graph.add(xp, hp)?;
        let pre = self.graph.add(s, b)?;
        let i_pre = self.graph.narrow(pre, 0, hidden)?;
        let f_pre = self.graph.narrow(pre, hidden, hidden)?;
        let g_pre = self.graph.narrow(pre, 2 * hidden, hidden)?;
        let o_pre = self.graph.narrow(pre, 3 * hidden, hidden)?;
        let i = self.graph.sigmoid(i_pre);
        let f = self.graph.sigmoid(f_pre);
        let g = self.graph.tanh(g_pre);
        let o = self.graph.sigmoid(o_pre);
        let fc = self.graph.mul(f, state.c)?;
        let ig = self.graph.mul(i, g)?;
        let c = self.graph.add(fc, ig)?;
        let tc = self.graph.tanh(c);
        let h = self.graph.mul(o, tc)?;
        Ok(StepState { h, c })
    }

    /// Bidirectional encoder over the rows of `features` ([m, feature_dim]).
    fn encode(&mut self, features: &Tensor) -> Result<Vec<VarId>> {
        let cfg = &self.model.config;
        if !features.is_matrix() || features.shape()[1] != cfg.feature_dim {
            return Err(Error::Dim {
                op: "encode",
                lhs: features.shape().to_vec(),
                rhs: vec![cfg.feature_dim],
            });
        }
        let m = features.rows();
        if m == 0 {
            return Err(Error::Usage("encode requires at least one feature".into()));
        }
        if m > cfg.max_features {
            return Err(Error::Contract(format!(
                "{m} features exceed the cap of {}; subsample first",
                cfg.max_features
            )));
        }
        let fmat = self.graph.constant(features.clone());
        let rows: Vec<VarId> = (0..m)
            .map(|j| self.graph.row(fmat, j))
            .collect::<Result<_>>()?;

        let h = cfg.encoder_hidden;
        let mut fwd = Vec::with_capacity(m);
        let mut state = self.zero_state(h);
        for &x in &rows {
            state = self.lstm_step(self.model.ids.enc_fwd, h, x, state)?;
            fwd.push(state.h);
        }
        let mut bwd = Vec::with_capacity(m);
        let mut state = self.zero_state(h);
        for j in (0..m).rev() {
            state = self.lstm_step(self.model.ids.enc_bwd, h, rows[j], state)?;
            bwd.push(state.h);
        }
        bwd.reverse();
        (0..m)
            .map(|j| self.graph.concat(&[fwd[j], bwd[j]], 0))
            .collect()
    }

    fn zero_state(&mut self, hidden: usize) -> StepState {
        let h = self.graph.constant(Tensor::zeros(vec![hidden]));
        let c = self.graph.constant(Tensor::zeros(vec![hidden]));
        StepState { h, c }
    }

    pub fn initial_decoder_state(&mut self) -> StepState {
        self.zero_state(self.model.config.decoder_hidden)
    }

    /// Gate weights from the topic embedding alone. With a single expert the
    /// mixture is trivially [1.0] no matter what the gate parameters say.
    fn gate(&mut self, topic: VarId) -> Result<VarId> {
        let cfg = &self.model.config;
        if cfg.expert_count == 1 {
            return Ok(self.graph.constant(Tensor::from_vec(vec![1], vec![1.0])?));
        }
        let w1 = self.p(self.model.ids.gate_w1);
        let b1 = self.p(self.model.ids.gate_b1);
        let w2 = self.p(self.model.ids.gate_w2);
        let b2 = self.p(self.model.ids.gate_b2);
        let z1 = self.graph.matmul(w1, topic)?;
        let z1 = self.graph.add(z1, b1)?;
        let a1 = self.graph.tanh(z1);
        let z2 = self.graph.matmul(w2, a1)?;
        let logits = self.graph.add(z2, b2)?;
        self.graph.softmax_t(logits, cfg.temperature)
    }

    /// Run the encoder and gate for one sample and register its dropout
    /// masks. The Base family substitutes a zero topic vector.
    pub fn begin_sequence(
        &mut self,
        features: &Tensor,
        topic: &TopicEmbedding,
        masks: &DropoutMaskSet,
    ) -> Result<SeqCtx> {
        let cfg = &self.model.config;
        let topic_vec = if cfg.family == ModelFamily::Base {
            Tensor::zeros(vec![cfg.topic_dim()])
        } else {
            if topic.dim() != cfg.topic_dim() {
                return Err(Error::Dim {
                    op: "topic embedding",
                    lhs: vec![cfg.topic_dim()],
                    rhs: vec![topic.dim()],
                });
            }
            topic.vector.clone()
        };
        let enc_out = self.encode(features)?;
        let we = self.p(self.model.ids.attn_we);
        let enc_proj: Vec<VarId> = enc_out
            .iter()
            .map(|&h| self.graph.matmul(we, h))
            .collect::<Result<_>>()?;
        let topic_var = self.graph.constant(topic_vec);
        let beta = self.gate(topic_var)?;

        let scale = masks.scale();
        let mut scaled = masks.dec_input.clone();
        scaled.scale_in_place(scale);
        let mask_dec = self.graph.constant(scaled);
        let mask_experts = masks
            .experts
            .iter()
            .map(|m| {
                let mut s = m.clone();
                s.scale_in_place(scale);
                self.graph.constant(s)
            })
            .collect();

        Ok(SeqCtx {
            enc_out,
            enc_proj,
            topic: topic_var,
            beta,
            mask_dec,
            mask_experts,
        })
    }

    /// Additive attention over the encoder outputs, conditioned on the
    /// previous decoder hidden state. Returns (context, weights).
    fn attend(&mut self, ctx: &SeqCtx, h_prev: VarId) -> Result<(VarId, VarId)> {
        let wh = self.p(self.model.ids.attn_wh);
        let v = self.p(self.model.ids.attn_v);
        let q = self.graph.matmul(wh, h_prev)?;
        let mut scores = Vec::with_capacity(ctx.enc_proj.len());
        for &u in &ctx.enc_proj {
            let s = self.graph.add(u, q)?;
            let t = self.graph.tanh(s);
            scores.push(self.graph.dot(v, t)?);
        }
        let e = self.graph.concat(&scores, 0)?;
        let alpha = self.graph.softmax(e)?;
        let context = self.graph.weighted_sum(alpha, &ctx.enc_out)?;
        Ok((context, alpha))
    }

    /// Mixture-of-experts readout of the decoder state.
    fn moe(&mut self, ctx: &SeqCtx, h: VarId) -> Result<VarId> {
        let mut outs = Vec::with_capacity(self.model.ids.experts.len());
        let experts = self.model.ids.experts.clone();
        for (s, (w, b)) in experts.into_iter().enumerate() {
            let wv = self.p(w);
            let bv = self.p(b);
            let z = self.graph.matmul(wv, h)?;
            let z = self.graph.add(z, bv)?;
            let a = self.graph.relu(z);
            outs.push(self.graph.mul(a, ctx.mask_experts[s])?);
        }
        self.graph.weighted_sum(ctx.beta, &outs)
    }

    /// One decoder step: embed the previous token, attend, run the LSTM on
    /// the masked [word, context, topic] concatenation, mix the experts, and
    /// project back through the embedding table to vocabulary logits.
    pub fn decode_step(
        &mut self,
        ctx: &SeqCtx,
        prev_token: u32,
        state: StepState,
    ) -> Result<StepOut> {
        let cfg = &self.model.config;
        if prev_token as usize >= self.model.vocab_size {
            return Err(Error::Contract(format!(
                "token id {prev_token} outside vocabulary of {}",
                self.model.vocab_size
            )));
        }
        let emb = self.embedding()?;
        let w_prev = self.graph.row(emb, prev_token as usize)?;
        let (context, alpha) = self.attend(ctx, state.h)?;
        let x = self.graph.concat(&[w_prev, context, ctx.topic], 0)?;
        let x = self.graph.mul(x, ctx.mask_dec)?;
        let next = self.lstm_step(self.model.ids.dec, cfg.decoder_hidden, x, state)?;
        let o = self.moe(ctx, next.h)?;
        let proj = self.p(self.model.ids.proj);
        let y = self.graph.matmul(proj, o)?;
        let logits = self.graph.matmul(emb, y)?;

        if let Some(trace) = self.trace.as_mut() {
            trace.betas.push(self.graph.value(ctx.beta).data().to_vec());
            trace
                .dec_masks
                .push(self.graph.value(ctx.mask_dec).data().to_vec());
            trace
                .attn_weights
                .push(self.graph.value(alpha).data().to_vec());
        }
        Ok(StepOut {
            state: next,
            logits,
            attn: alpha,
        })
    }

    /// Teacher-forced pass over one gold sequence with schedule sampling:
    /// each step's input is the gold previous token with probability
    /// `sampling_prob`, otherwise the argmax of the previous step's logits.
    /// PAD targets terminate the loss sum.
    pub fn teacher_forced(
        &mut self,
        ctx: &SeqCtx,
        gold: &[u32],
        sampling_prob: f64,
        rng: &mut impl RngExt,
    ) -> Result<TeacherForcedOut> {
        let cfg = &self.model.config;
        if gold.is_empty() {
            return Err(Error::Usage("empty gold sequence".into()));
        }
        if gold.len() > cfg.max_caption_len {
            return Err(Error::Contract(format!(
                "gold sequence of {} tokens exceeds the cap of {}",
                gold.len(),
                cfg.max_caption_len
            )));
        }
        let mut state = self.initial_decoder_state();
        let mut prev = crate::text::BOS;
        let mut step_logits = Vec::with_capacity(gold.len());
        let mut losses = Vec::with_capacity(gold.len());
        for (t, &target) in gold.iter().enumerate() {
            if target == crate::text::PAD {
                break;
            }
            let out = self.decode_step(ctx, prev, state)?;
            losses.push(self.graph.cross_entropy(out.logits, target as usize)?);
            state = out.state;
            prev = if t + 1 < gold.len() {
                if rng.random_bool(sampling_prob) {
                    target
                } else {
                    self.graph.value(out.logits).argmax() as u32
                }
            } else {
                target
            };
            step_logits.push(out.logits);
        }
        let loss_sum = self.graph.add_n(&losses)?;
        Ok(TeacherForcedOut {
            step_logits,
            loss_sum,
            token_count: losses.len(),
        })
    }

    /// Mean of per-sample loss sums (the batch loss).
    pub fn batch_loss(&mut self, sample_losses: &[VarId]) -> Result<VarId> {
        let total = self.graph.add_n(sample_losses)?;
        Ok(self.graph.scale(total, 1.0 / sample_losses.len() as f64))
    }

    /// Total cross entropy divided by total token count: the per-token mean
    /// loss. This is the quantity reported in logs and the one certified by
    /// the end-to-end gradient check.
    pub fn token_mean_loss(&mut self, outs: &[TeacherForcedOut]) -> Result<VarId> {
        let sums: Vec<VarId> = outs.iter().map(|o| o.loss_sum).collect();
        let tokens: usize = outs.iter().map(|o| o.token_count).sum();
        let total = self.graph.add_n(&sums)?;
        Ok(self.graph.scale(total, 1.0 / tokens as f64))
    }

    /// Backward from `loss`, returning (parameter, gradient) pairs for the
    /// parameters this graph touched.
    pub fn backward_params(&self, loss: VarId) -> Result<Vec<(ParamId, Tensor)>> {
        let value = self.graph.value(loss);
        value.ensure_finite("loss")?;
        let grads = self.graph.backward(loss)?;
        let mut out = Vec::new();
        for (i, slot) in self.pvars.iter().enumerate() {
            if let Some(var) = slot {
                if let Some(g) = grads.get(*var) {
                    out.push((ParamId(i), g.clone()));
                }
            }
        }
        Ok(out)
    }
}
