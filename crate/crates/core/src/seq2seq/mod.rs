//! One-layer recurrent encoder–decoder with optional bilinear attention.
//!
//! The decoder starts from the encoder's final state (both `h` and `c` for
//! LSTMs) and is fed the gold previous token during training. With
//! attention, each step scores every encoder state as `h_decᵀ W_a h_enc`,
//! mixes them into a context vector and emits
//! `h̃ = tanh(W_c [context ; h_dec])`; `h̃` feeds the output layer only and is
//! not fed back into the next step.

mod cell;

pub use cell::{CellState, Unit};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{EOS_INDEX, SOS_INDEX};
use crate::numerics::{
    argmax, cross_entropy, dot, gemm_acc, gemm_t_acc, gemv_acc, linear_backward_batch, softmax_in_place,
    GradView, NumericsError, Objective, ParamId, ParamKind, ParamStore, Tensor,
};
use crate::{seeded_rng, RngStream};
use cell::{CellWeights, PreGrads, StepCache};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_EMBED: usize = 256;
pub const DEFAULT_MAX_DECODE_LEN: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("token index {index} out of range for a vocabulary of {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("attention is disabled for this model")]
    AttentionDisabled,
    #[error("state shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Multiplicative,
}

impl AttentionKind {
    pub fn enabled(self) -> bool {
        self == AttentionKind::Multiplicative
    }

    /// `+` with attention, `-` without.
    pub fn sign(self) -> &'static str {
        if self.enabled() {
            "+"
        } else {
            "-"
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Multiplicative => "multiplicative",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on" | "yes" | "true" | "multiplicative" | "attn" | "+" => Ok(AttentionKind::Multiplicative),
            "off" | "no" | "false" | "none" | "-" => Ok(AttentionKind::None),
            other => Err(format!("unknown attention setting `{other}` (expected on or off)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub unit: Unit,
    pub attention: AttentionKind,
    pub hidden_size: usize,
    pub embed_size: usize,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    pub max_decode_len: usize,
}

impl ModelConfig {
    pub fn new(unit: Unit, attention: AttentionKind, source_vocab_size: usize, target_vocab_size: usize) -> Self {
        ModelConfig {
            unit,
            attention,
            hidden_size: DEFAULT_HIDDEN,
            embed_size: DEFAULT_EMBED,
            source_vocab_size,
            target_vocab_size,
            max_decode_len: DEFAULT_MAX_DECODE_LEN,
        }
    }

    pub fn with_sizes(mut self, hidden: usize, embed: usize) -> Self {
        self.hidden_size = hidden;
        self.embed_size = embed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_size == 0 || self.embed_size == 0 {
            return Err(ModelError::InvalidConfig("hidden and embedding sizes must be positive".into()));
        }
        if self.source_vocab_size < 3 || self.target_vocab_size < 3 {
            return Err(ModelError::InvalidConfig(
                "vocabularies need the two reserved tokens and at least one symbol".into(),
            ));
        }
        Ok(())
    }

    /// Short architecture label such as `GRU(+)`.
    pub fn label(&self) -> String {
        format!("{}({})", self.unit.label(), self.attention.sign())
    }
}

#[derive(Debug, Clone, Copy)]
struct CellIds {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    w_a: ParamId,
    w_c: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    src_embed: ParamId,
    tgt_embed: ParamId,
    enc: CellIds,
    dec: CellIds,
    attn: Option<AttnIds>,
    w_out: ParamId,
    b_out: ParamId,
}

/// Encoder or decoder side of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// Deliberate backward-pass faults, used to show the gradient check bites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Negates the reset-gate pre-activation gradient in GRU cells.
    GruResetSignFlip,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gru-reset-sign-flip" | "gru-reset-sign" => Ok(Fault::GruResetSignFlip),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Hidden vector after each source position.
    pub states: Vec<Vec<f64>>,
    pub final_state: CellState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `h̃ = tanh(W_c [context ; h_dec])`
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForced {
    pub token_losses: Vec<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub logits: Vec<f64>,
    pub state: CellState,
    pub attention: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub tokens: Vec<usize>,
    /// Attention weights over source positions, one vector per emitted token.
    pub attention: Vec<Vec<f64>>,
}

struct AttnCache {
    h: Vec<f64>,
    q: Vec<f64>,
    alpha: Vec<f64>,
    /// `[context ; h]`
    u: Vec<f64>,
    out: Vec<f64>,
}

struct DecStep {
    input: usize,
    cell: StepCache,
    attn: Option<AttnCache>,
    /// Vector fed to the output layer (`h̃` or `h`).
    features: Vec<f64>,
    /// `softmax(logits) - onehot(gold)`
    dlogits: Vec<f64>,
}

struct Trace {
    enc_steps: Vec<StepCache>,
    enc_states: Vec<Vec<f64>>,
    dec_steps: Vec<DecStep>,
    token_losses: Vec<f64>,
}

/// Encoder–decoder model and its parameters.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    config: ModelConfig,
    params: ParamStore,
    ids: Ids,
    fault: Option<Fault>,
}

impl Seq2Seq {
    /// Model with Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::zeros(config)?;
        m.params.init_glorot(&mut seeded_rng(seed, RngStream::Init));
        Ok(m)
    }

    /// Model with every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (h, e, g) = (config.hidden_size, config.embed_size, config.unit.gates());
        let mut p = ParamStore::new();
        let cell = |p: &mut ParamStore, side: &str| -> Result<CellIds, NumericsError> {
            Ok(CellIds {
                w_ih: p.add(&format!("{side}.w_ih"), ParamKind::Weight, Tensor::zeros(g * h, e))?,
                w_hh: p.add(&format!("{side}.w_hh"), ParamKind::Weight, Tensor::zeros(g * h, h))?,
                b_ih: p.add(&format!("{side}.b_ih"), ParamKind::Bias, Tensor::zeros(g * h, 1))?,
                b_hh: p.add(&format!("{side}.b_hh"), ParamKind::Bias, Tensor::zeros(g * h, 1))?,
            })
        };
        let src_embed = p.add(
            "encoder.embedding",
            ParamKind::Weight,
            Tensor::zeros(config.source_vocab_size, e),
        )?;
        let enc = cell(&mut p, "encoder")?;
        let tgt_embed = p.add(
            "decoder.embedding",
            ParamKind::Weight,
            Tensor::zeros(config.target_vocab_size, e),
        )?;
        let dec = cell(&mut p, "decoder")?;
        let attn = if config.attention.enabled() {
            Some(AttnIds {
                w_a: p.add("attention.w_a", ParamKind::Weight, Tensor::zeros(h, h))?,
                w_c: p.add("attention.w_c", ParamKind::Weight, Tensor::zeros(h, 2 * h))?,
            })
        } else {
            None
        };
        let w_out = p.add("output.w", ParamKind::Weight, Tensor::zeros(config.target_vocab_size, h))?;
        let b_out = p.add("output.b", ParamKind::Bias, Tensor::zeros(config.target_vocab_size, 1))?;
        let ids = Ids { src_embed, tgt_embed, enc, dec, attn, w_out, b_out };
        Ok(Seq2Seq { config, params: p, ids, fault: None })
    }

    /// Rebuilds a model around an existing parameter store (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut m = Self::zeros(config)?;
        if params.len() != m.params.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                m.params.len(),
                params.len()
            )));
        }
        for id in m.params.ids().collect::<Vec<_>>() {
            let name = m.params.name(id).to_string();
            let src = params.value(params.id(&name)?);
            let dst = m.params.value_mut(id);
            if src.shape() != dst.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "`{name}` is {:?}, expected {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    fn cell_weights(&self, side: Side) -> CellWeights<'_> {
        let ids = match side {
            Side::Encoder => self.ids.enc,
            Side::Decoder => self.ids.dec,
        };
        CellWeights {
            unit: self.config.unit,
            input: self.config.embed_size,
            hidden: self.config.hidden_size,
            w_ih: self.params.value(ids.w_ih).data(),
            w_hh: self.params.value(ids.w_hh).data(),
            b_ih: self.params.value(ids.b_ih).data(),
            b_hh: self.params.value(ids.b_hh).data(),
        }
    }

    fn check_state(&self, state: &CellState) -> Result<(), ModelError> {
        let h = self.config.hidden_size;
        let lstm = self.config.unit == Unit::Lstm;
        if state.h.len() != h || state.c.is_some() != lstm || state.c.as_ref().is_some_and(|c| c.len() != h) {
            return Err(ModelError::ShapeMismatch(format!(
                "state does not fit a {} cell of size {h}",
                self.config.unit
            )));
        }
        Ok(())
    }

    fn embedding(&self, side: Side, index: usize) -> Result<&[f64], ModelError> {
        let (id, size) = match side {
            Side::Encoder => (self.ids.src_embed, self.config.source_vocab_size),
            Side::Decoder => (self.ids.tgt_embed, self.config.target_vocab_size),
        };
        if index >= size {
            return Err(ModelError::IndexOutOfRange { index, size });
        }
        Ok(self.params.value(id).row(index))
    }

    /// One recurrent step of the encoder or decoder cell on input vector `x`.
    pub fn cell_step(&self, side: Side, x: &[f64], state: &CellState) -> Result<CellState, ModelError> {
        self.check_state(state)?;
        if x.len() != self.config.embed_size {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} entries, expected {}",
                x.len(),
                self.config.embed_size
            )));
        }
        Ok(cell::forward(self.cell_weights(side), x, state).0)
    }

    /// Runs the encoder over `source` from the zero state.
    pub fn encode_sequence(&self, source: &[usize]) -> Result<EncoderOutput, ModelError> {
        let (states, _, final_state) = self.encode_cached(source)?;
        Ok(EncoderOutput { states, final_state })
    }

    fn encode_cached(&self, source: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<StepCache>, CellState), ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptySequence("source"));
        }
        let w = self.cell_weights(Side::Encoder);
        let xs = source
            .iter()
            .map(|&i| self.embedding(Side::Encoder, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut state = CellState::zeros(self.config.unit, self.config.hidden_size);
        let mut states = Vec::with_capacity(source.len());
        let mut caches = Vec::with_capacity(source.len());
        for pre in cell::input_projections(w, &xs) {
            let (next, cache) = cell::forward_projected(w, pre, &state);
            states.push(next.h.clone());
            caches.push(cache);
            state = next;
        }
        Ok((states, caches, state))
    }

    /// Bilinear attention of decoder state `h_dec` over `encoder_states`.
    pub fn attend(&self, h_dec: &[f64], encoder_states: &[Vec<f64>]) -> Result<AttentionOutput, ModelError> {
        if h_dec.len() != self.config.hidden_size {
            return Err(ModelError::ShapeMismatch("decoder state size".into()));
        }
        if encoder_states.is_empty() {
            return Err(ModelError::EmptySequence("encoder state"));
        }
        let c = self.attend_cached(h_dec, encoder_states)?;
        let h = self.config.hidden_size;
        Ok(AttentionOutput { weights: c.alpha, context: c.u[..h].to_vec(), output: c.out })
    }

    fn attend_cached(&self, h_dec: &[f64], enc: &[Vec<f64>]) -> Result<AttnCache, ModelError> {
        Ok(self.attend_batch(&[h_dec], enc)?.pop().expect("one query"))
    }

    /// Attention for several decoder states over the same encoder states.
    fn attend_batch(&self, h_dec: &[&[f64]], enc: &[Vec<f64>]) -> Result<Vec<AttnCache>, ModelError> {
        let ids = self.ids.attn.ok_or(ModelError::AttentionDisabled)?;
        let hs = self.config.hidden_size;
        let w_a = self.params.value(ids.w_a).data();
        let w_c = self.params.value(ids.w_c).data();
        // score_s = h_decᵀ W_a e_s = (W_aᵀ h_dec) · e_s
        let mut qs = vec![vec![0.0; hs]; h_dec.len()];
        gemm_t_acc(w_a, hs, h_dec, &mut qs);
        let mut us = Vec::with_capacity(h_dec.len());
        let mut alphas = Vec::with_capacity(h_dec.len());
        for (q, h) in qs.iter().zip(h_dec) {
            let mut alpha: Vec<f64> = enc.iter().map(|e| dot(q, e)).collect();
            softmax_in_place(&mut alpha);
            let mut u = vec![0.0; 2 * hs];
            for (a, e) in alpha.iter().zip(enc) {
                for (ui, ei) in u[..hs].iter_mut().zip(e) {
                    *ui += a * ei;
                }
            }
            u[hs..].copy_from_slice(h);
            us.push(u);
            alphas.push(alpha);
        }
        let mut outs = vec![vec![0.0; hs]; h_dec.len()];
        {
            let ur: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
            gemm_acc(w_c, 2 * hs, &ur, &mut outs);
        }
        Ok(qs
            .into_iter()
            .zip(alphas)
            .zip(us)
            .zip(outs)
            .zip(h_dec)
            .map(|((((q, alpha), u), mut out), h)| {
                out.iter_mut().for_each(|v| *v = v.tanh());
                AttnCache { h: h.to_vec(), q, alpha, u, out }
            })
            .collect())
    }

    fn output_logits(&self, features: &[f64]) -> Vec<f64> {
        let mut logits = self.params.value(self.ids.b_out).data().to_vec();
        gemv_acc(self.params.value(self.ids.w_out).data(), self.config.hidden_size, features, &mut logits);
        logits
    }

    /// Advances the decoder by one token and scores the next symbol.
    pub fn decode_step(
        &self,
        prev_token: usize,
        state: &CellState,
        encoder_states: &[Vec<f64>],
    ) -> Result<DecodeStep, ModelError> {
        self.check_state(state)?;
        let x = self.embedding(Side::Decoder, prev_token)?;
        let (next, _) = cell::forward(self.cell_weights(Side::Decoder), x, state);
        let (logits, attention) = match self.ids.attn {
            Some(_) => {
                let a = self.attend_cached(&next.h, encoder_states)?;
                (self.output_logits(&a.out), Some(a.alpha))
            }
            None => (self.output_logits(&next.h), None),
        };
        Ok(DecodeStep { logits, state: next, attention })
    }

    fn check_target(&self, target: &[usize]) -> Result<(), ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptySequence("target"));
        }
        let size = self.config.target_vocab_size;
        match target.iter().find(|&&t| t >= size) {
            Some(&index) => Err(ModelError::IndexOutOfRange { index, size }),
            None => Ok(()),
        }
    }

    fn forward_trace(&self, source: &[usize], target: &[usize]) -> Result<Trace, ModelError> {
        self.check_target(target)?;
        let (enc_states, enc_steps, mut state) = self.encode_cached(source)?;
        let n = target.len();
        let w = self.cell_weights(Side::Decoder);
        // Teacher forcing fixes every decoder input up front, and nothing
        // computed after the cell feeds back into it, so only the recurrence
        // itself has to run step by step.
        let inputs: Vec<usize> = std::iter::once(SOS_INDEX).chain(target[..n - 1].iter().copied()).collect();
        let xs = inputs
            .iter()
            .map(|&i| self.embedding(Side::Decoder, i))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cells = Vec::with_capacity(n);
        let mut hs = Vec::with_capacity(n);
        for pre in cell::input_projections(w, &xs) {
            let (next, cache) = cell::forward_projected(w, pre, &state);
            hs.push(next.h.clone());
            cells.push(cache);
            state = next;
        }
        let attn: Vec<Option<AttnCache>> = match self.ids.attn {
            Some(_) => {
                let hr: Vec<&[f64]> = hs.iter().map(Vec::as_slice).collect();
                self.attend_batch(&hr, &enc_states)?.into_iter().map(Some).collect()
            }
            None => (0..n).map(|_| None).collect(),
        };
        let features: Vec<Vec<f64>> = attn
            .iter()
            .zip(hs)
            .map(|(a, h)| a.as_ref().map_or(h, |a| a.out.clone()))
            .collect();
        let mut logits = vec![self.params.value(self.ids.b_out).data().to_vec(); n];
        {
            let fr: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
            gemm_acc(self.params.value(self.ids.w_out).data(), self.config.hidden_size, &fr, &mut logits);
        }
        let mut dec_steps = Vec::with_capacity(n);
        let mut token_losses = Vec::with_capacity(n);
        for ((((input, cell), attn), features), (logits, &gold)) in
            inputs.into_iter().zip(cells).zip(attn).zip(features).zip(logits.iter().zip(target))
        {
            let (loss, dlogits) = cross_entropy(logits, gold)?;
            token_losses.push(loss);
            dec_steps.push(DecStep { input, cell, attn, features, dlogits });
        }
        Ok(Trace { enc_steps, enc_states, dec_steps, token_losses })
    }

    /// Per-token cross-entropy with gold previous tokens fed to the decoder.
    ///
    /// `target` is the EOS-terminated index sequence without `<sos>`.
    pub fn forward_teacher_forced(&self, source: &[usize], target: &[usize]) -> Result<TeacherForced, ModelError> {
        let trace = self.forward_trace(source, target)?;
        let mean_loss = trace.token_losses.iter().sum::<f64>() / trace.token_losses.len() as f64;
        Ok(TeacherForced { token_losses: trace.token_losses, mean_loss })
    }

    /// Adds the gradient of the mean teacher-forced loss to the parameter
    /// store's accumulators and returns the per-token losses.
    pub fn accumulate_gradients(&mut self, source: &[usize], target: &[usize]) -> Result<TeacherForced, ModelError> {
        let trace = self.forward_trace(source, target)?;
        self.backward(source, &trace);
        let n = trace.token_losses.len() as f64;
        let mean_loss = trace.token_losses.iter().sum::<f64>() / n;
        Ok(TeacherForced { token_losses: trace.token_losses, mean_loss })
    }

    fn backward(&mut self, source: &[usize], trace: &Trace) {
        let cfg = &self.config;
        let (hs, es) = (cfg.hidden_size, cfg.embed_size);
        let unit = cfg.unit;
        let ids = self.ids;
        let flip = self.fault == Some(Fault::GruResetSignFlip) && unit == Unit::Gru;
        let (values, mut grads) = self.params.split_mut();
        let weights = |c: CellIds| CellWeights {
            unit,
            input: es,
            hidden: hs,
            w_ih: values.get(c.w_ih),
            w_hh: values.get(c.w_hh),
            b_ih: values.get(c.b_ih),
            b_hh: values.get(c.b_hh),
        };
        let n_dec = trace.dec_steps.len();
        let scale = 1.0 / n_dec as f64;
        let w_out = values.get(ids.w_out);

        // Output layer, for all steps at once; nothing recurrent flows through it.
        let dlogits: Vec<Vec<f64>> =
            trace.dec_steps.iter().map(|s| s.dlogits.iter().map(|g| g * scale).collect()).collect();
        for d in &dlogits {
            for (g, v) in grads.get(ids.b_out).iter_mut().zip(d) {
                *g += v;
            }
        }
        let mut d_feat = vec![vec![0.0; hs]; n_dec];
        {
            let dys: Vec<&[f64]> = dlogits.iter().map(Vec::as_slice).collect();
            let xs: Vec<&[f64]> = trace.dec_steps.iter().map(|s| s.features.as_slice()).collect();
            linear_backward_batch(w_out, grads.get(ids.w_out), hs, &dys, &xs, Some(&mut d_feat));
        }

        // Attention output projection `h̃ = tanh(W_c u)`, also non-recurrent.
        // `d_dec_h[t]` collects the loss gradient reaching decoder state t from above.
        let mut d_dec_h = d_feat;
        let mut d_enc = vec![vec![0.0; hs]; trace.enc_states.len()];
        if let Some(aids) = ids.attn {
            let w_a = values.get(aids.w_a);
            let w_c = values.get(aids.w_c);
            let caches: Vec<&AttnCache> = trace.dec_steps.iter().map(|s| s.attn.as_ref().expect("attention cache")).collect();
            let das: Vec<Vec<f64>> = caches
                .iter()
                .zip(&d_dec_h)
                .map(|(a, g)| g.iter().zip(&a.out).map(|(g, o)| g * (1.0 - o * o)).collect())
                .collect();
            let mut dus = vec![vec![0.0; 2 * hs]; n_dec];
            {
                let dys: Vec<&[f64]> = das.iter().map(Vec::as_slice).collect();
                let xs: Vec<&[f64]> = caches.iter().map(|a| a.u.as_slice()).collect();
                linear_backward_batch(w_c, grads.get(aids.w_c), 2 * hs, &dys, &xs, Some(&mut dus));
            }
            let mut dqs = Vec::with_capacity(n_dec);
            for ((a, du), dh) in caches.iter().zip(&dus).zip(d_dec_h.iter_mut()) {
                let (dctx, dh_from_u) = du.split_at(hs);
                dh.copy_from_slice(dh_from_u);
                let dalpha: Vec<f64> = trace.enc_states.iter().map(|e| dot(dctx, e)).collect();
                let mean: f64 = a.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                let mut dq = vec![0.0; hs];
                for (s, e) in trace.enc_states.iter().enumerate() {
                    let dscore = a.alpha[s] * (dalpha[s] - mean);
                    let de = &mut d_enc[s];
                    for j in 0..hs {
                        de[j] += a.alpha[s] * dctx[j] + dscore * a.q[j];
                        dq[j] += dscore * e[j];
                    }
                }
                // q = W_aᵀ h, so dh += W_a dq and dW_a += h dqᵀ.
                gemv_acc(w_a, hs, &dq, dh);
                dqs.push(dq);
            }
            let hs_: Vec<&[f64]> = caches.iter().map(|a| a.h.as_slice()).collect();
            let dq_: Vec<&[f64]> = dqs.iter().map(Vec::as_slice).collect();
            linear_backward_batch(w_a, grads.get(aids.w_a), hs, &hs_, &dq_, None);
        }

        // Decoder recurrence, back to front.
        let mut dh_next = vec![0.0; hs];
        let mut dc_next: Option<Vec<f64>> = (unit == Unit::Lstm).then(|| vec![0.0; hs]);
        let mut dec_pre = Vec::with_capacity(n_dec);
        {
            let w = weights(ids.dec);
            let [db_ih, db_hh] = grads.disjoint([ids.dec.b_ih, ids.dec.b_hh]);
            for (step, d_above) in trace.dec_steps.iter().zip(&d_dec_h).rev() {
                let dh: Vec<f64> = dh_next.iter().zip(d_above).map(|(a, b)| a + b).collect();
                let pre = cell::pre_activation_grads(unit, hs, &step.cell, &dh, dc_next.as_deref(), flip);
                (dh_next, dc_next) = cell::backward_step(w, db_ih, db_hh, &pre);
                dec_pre.push(pre);
            }
        }
        dec_pre.reverse();
        self::accumulate_cell(
            weights(ids.dec),
            &mut grads,
            ids.dec,
            ids.tgt_embed,
            values.get(ids.tgt_embed),
            trace.dec_steps.iter().map(|s| (&s.cell, s.input)),
            &dec_pre,
        );

        // dh_next / dc_next now hold the gradient w.r.t. the encoder's final state.
        let mut dh = dh_next;
        let mut dc = dc_next;
        let mut enc_pre = Vec::with_capacity(source.len());
        {
            let w = weights(ids.enc);
            let [db_ih, db_hh] = grads.disjoint([ids.enc.b_ih, ids.enc.b_hh]);
            for (s, cache) in trace.enc_steps.iter().enumerate().rev() {
                for (x, y) in dh.iter_mut().zip(&d_enc[s]) {
                    *x += y;
                }
                let pre = cell::pre_activation_grads(unit, hs, cache, &dh, dc.as_deref(), flip);
                (dh, dc) = cell::backward_step(w, db_ih, db_hh, &pre);
                enc_pre.push(pre);
            }
        }
        enc_pre.reverse();
        self::accumulate_cell(
            weights(ids.enc),
            &mut grads,
            ids.enc,
            ids.src_embed,
            values.get(ids.src_embed),
            trace.enc_steps.iter().zip(source).map(|(c, &i)| (c, i)),
            &enc_pre,
        );
    }

    /// Greedy decoding: argmax at each step (ties to the lowest index),
    /// stopping after `<eos>` or `max_len` tokens. The returned indices
    /// include the `<eos>` when one was produced.
    pub fn greedy_decode(&self, source: &[usize], max_len: usize) -> Result<Vec<usize>, ModelError> {
        Ok(self.greedy_decode_traced(source, max_len)?.tokens)
    }

    /// Greedy decoding that also returns the attention weights of each step.
    pub fn greedy_decode_traced(&self, source: &[usize], max_len: usize) -> Result<DecodeTrace, ModelError> {
        let mut trace = DecodeTrace { tokens: Vec::new(), attention: Vec::new() };
        if max_len == 0 {
            return Ok(trace);
        }
        let enc = self.encode_sequence(source)?;
        let mut state = enc.final_state;
        let mut prev = SOS_INDEX;
        for _ in 0..max_len {
            let step = self.decode_step(prev, &state, &enc.states)?;
            let tok = argmax(&step.logits);
            trace.tokens.push(tok);
            if let Some(a) = step.attention {
                trace.attention.push(a);
            }
            if tok == EOS_INDEX {
                break;
            }
            state = step.state;
            prev = tok;
        }
        Ok(trace)
    }
}

/// Weight and embedding gradients of one cell over a whole sequence.
fn accumulate_cell<'a>(
    w: CellWeights<'_>,
    grads: &mut GradView<'_>,
    cell_ids: CellIds,
    embed_id: ParamId,
    embed: &[f64],
    steps: impl Iterator<Item = (&'a StepCache, usize)>,
    pre: &[PreGrads],
) {
    let es = w.input;
    let steps: Vec<(&StepCache, usize)> = steps.collect();
    let batch: Vec<(&StepCache, &[f64], &PreGrads)> = steps
        .iter()
        .zip(pre)
        .map(|(&(c, i), p)| (c, &embed[i * es..(i + 1) * es], p))
        .collect();
    let [dw_ih, dw_hh] = grads.disjoint([cell_ids.w_ih, cell_ids.w_hh]);
    let dxs = cell::accumulate_weights(w, dw_ih, dw_hh, &batch);
    let demb = grads.get(embed_id);
    for (&(_, i), dx) in steps.iter().zip(&dxs) {
        for (g, d) in demb[i * es..(i + 1) * es].iter_mut().zip(dx) {
            *g += d;
        }
    }
}

/// A model bound to one (source, target) pair, as a differentiable objective.
pub struct ExampleObjective<'a> {
    pub model: &'a mut Seq2Seq,
    pub source: &'a [usize],
    pub target: &'a [usize],
}

fn to_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => NumericsError::InvalidArgument(other.to_string()),
    }
}

impl Objective for ExampleObjective<'_> {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn loss(&self) -> Result<f64, NumericsError> {
        self.model
            .forward_teacher_forced(self.source, self.target)
            .map(|t| t.mean_loss)
            .map_err(to_numerics)
    }

    fn loss_and_grad(&mut self) -> Result<f64, NumericsError> {
        self.model.params.zero_grads();
        self.model
            .accumulate_gradients(self.source, self.target)
            .map(|t| t.mean_loss)
            .map_err(to_numerics)
    }
}

#[cfg(test)]
mod tests;
