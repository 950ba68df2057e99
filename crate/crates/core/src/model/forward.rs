use super::config::ModelConfig;
use super::weights::{LayerParams, ModelVars, TransformerWeights};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var, MASKED_LOGIT};
use crate::tensor::Tensor;
use rand::RngCore;

/// Per-layer attention distributions and hidden states of one sequence,
/// plus the task-head logits.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// H_0, the normalized embedding sum (`s × d`).
    pub embedding_output: Var,
    /// One `h × s × s` tensor per layer.
    pub attentions: Vec<Var>,
    /// One `s × d` tensor per layer (post-layer output).
    pub hiddens: Vec<Var>,
    /// `1 × output_size` task-head logits.
    pub logits: Var,
}

/// Source of dropout masks. [`Dropout::off`] disables dropout regardless of
/// the configured rate.
pub struct Dropout<'a>(Option<&'a mut dyn RngCore>);

impl<'a> Dropout<'a> {
    pub fn off() -> Self {
        Dropout(None)
    }

    pub fn with_rng(rng: &'a mut dyn RngCore) -> Self {
        Dropout(Some(rng))
    }

    fn apply(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Var {
        match self.0.as_deref_mut() {
            Some(rng) if rate > 0.0 => tape.dropout(x, rate, rng),
            _ => x,
        }
    }
}

/// One input sequence. `valid` marks real (non-padding) positions; `None`
/// means every position is real.
#[derive(Clone, Copy, Debug)]
pub struct EncoderInput<'a> {
    pub tokens: &'a [u32],
    pub segments: &'a [u32],
    pub valid: Option<&'a [bool]>,
}

impl<'a> EncoderInput<'a> {
    pub fn new(tokens: &'a [u32], segments: &'a [u32]) -> Self {
        EncoderInput {
            tokens,
            segments,
            valid: None,
        }
    }

    pub fn with_valid(mut self, valid: &'a [bool]) -> Self {
        self.valid = Some(valid);
        self
    }
}

/// Token + position + segment embeddings followed by layer norm.
pub fn embed(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    tokens: &[u32],
    segments: &[u32],
) -> Result<Var> {
    let s = tokens.len();
    if s == 0 {
        return Err(Error::InvalidArgument("empty token sequence".into()));
    }
    if s > config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: s,
            max: config.max_seq_len,
        });
    }
    if segments.len() != s {
        return Err(Error::InvalidArgument(format!(
            "{} segment ids for {s} tokens",
            segments.len()
        )));
    }
    let to_ids = |ids: &[u32], limit: usize| -> Result<Vec<usize>> {
        ids.iter()
            .map(|&i| {
                let i = i as usize;
                if i < limit {
                    Ok(i)
                } else {
                    Err(Error::TokenOutOfRange { id: i, vocab: limit })
                }
            })
            .collect()
    };
    let token_ids = to_ids(tokens, config.vocab_size)?;
    let segment_ids = to_ids(segments, config.type_vocab_size)?;
    let positions: Vec<usize> = (0..s).collect();
    let tok = tape.gather_rows(vars.token_embeddings, &token_ids)?;
    let pos = tape.gather_rows(vars.position_embeddings, &positions)?;
    let seg = tape.gather_rows(vars.segment_embeddings, &segment_ids)?;
    let sum = tape.add(tok, pos)?;
    let sum = tape.add(sum, seg)?;
    tape.layer_norm(
        sum,
        vars.embedding_ln_gain,
        vars.embedding_ln_bias,
        config.layer_norm_eps,
    )
}

/// Additive attention mask (`s × s`) hiding invalid key positions.
pub fn attention_mask(valid: &[bool]) -> Option<Tensor> {
    if valid.iter().all(|&v| v) {
        return None;
    }
    let s = valid.len();
    let row: Vec<f64> = valid
        .iter()
        .map(|&v| if v { 0.0 } else { MASKED_LOGIT })
        .collect();
    let data = (0..s).flat_map(|_| row.iter().copied()).collect();
    Some(Tensor::new(&[s, s], data).expect("square mask"))
}

/// Multi-head self-attention sublayer with post-layer-norm residual.
/// Returns the stacked attention distributions (`h × s × s`) and H'.
pub fn mha_layer(
    tape: &mut Tape,
    config: &ModelConfig,
    layer: &LayerParams<Var>,
    h_prev: Var,
    mask: Option<Var>,
    dropout: &mut Dropout<'_>,
) -> Result<(Var, Var)> {
    let heads = config.num_heads;
    let dh = config.head_size();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = tape.matmul(h_prev, layer.query)?;
    let q = tape.add_row(q, layer.query_bias)?;
    let k = tape.matmul(h_prev, layer.key)?;
    let k = tape.add_row(k, layer.key_bias)?;
    let v = tape.matmul(h_prev, layer.value)?;
    let v = tape.add_row(v, layer.value_bias)?;

    let mut probs = Vec::with_capacity(heads);
    let mut contexts = Vec::with_capacity(heads);
    for a in 0..heads {
        let qa = tape.slice_cols(q, a * dh, dh)?;
        let ka = tape.slice_cols(k, a * dh, dh)?;
        let va = tape.slice_cols(v, a * dh, dh)?;
        let scores = tape.matmul_nt(qa, ka)?;
        let mut scores = tape.scale(scores, scale);
        if let Some(m) = mask {
            scores = tape.add(scores, m)?;
        }
        let p = tape.softmax_rows(scores);
        probs.push(p);
        let p = dropout.apply(tape, p, config.dropout);
        contexts.push(tape.matmul(p, va)?);
    }
    let attention = tape.stack(&probs)?;
    let context = if heads == 1 {
        contexts[0]
    } else {
        tape.concat_cols(&contexts)?
    };
    let out = tape.matmul(context, layer.output)?;
    let out = tape.add_row(out, layer.output_bias)?;
    let out = dropout.apply(tape, out, config.dropout);
    let residual = tape.add(h_prev, out)?;
    let h = tape.layer_norm(
        residual,
        layer.attn_ln_gain,
        layer.attn_ln_bias,
        config.layer_norm_eps,
    )?;
    Ok((attention, h))
}

/// Position-wise feed-forward sublayer with post-layer-norm residual.
pub fn ffn_layer(
    tape: &mut Tape,
    config: &ModelConfig,
    layer: &LayerParams<Var>,
    h: Var,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    let inner = tape.matmul(h, layer.ffn_in)?;
    let inner = tape.add_row(inner, layer.ffn_in_bias)?;
    let inner = tape.gelu(inner);
    let out = tape.matmul(inner, layer.ffn_out)?;
    let out = tape.add_row(out, layer.ffn_out_bias)?;
    let out = dropout.apply(tape, out, config.dropout);
    let residual = tape.add(h, out)?;
    tape.layer_norm(
        residual,
        layer.ffn_ln_gain,
        layer.ffn_ln_bias,
        config.layer_norm_eps,
    )
}

/// Runs the encoder stack and the task head on one sequence.
pub fn encoder_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    input: EncoderInput<'_>,
    dropout: &mut Dropout<'_>,
) -> Result<ForwardTrace> {
    let (embedding_output, attentions, hiddens) = encode(tape, config, vars, input, dropout)?;
    let last = hiddens.last().copied().unwrap_or(embedding_output);
    let first = tape.gather_rows(last, &[0])?;
    let pooled = tape.matmul(first, vars.pooler)?;
    let pooled = tape.add_row(pooled, vars.pooler_bias)?;
    let pooled = tape.tanh(pooled);
    let logits = tape.matmul(pooled, vars.classifier)?;
    let logits = tape.add_row(logits, vars.classifier_bias)?;
    Ok(ForwardTrace {
        embedding_output,
        attentions,
        hiddens,
        logits,
    })
}

type Encoded = (Var, Vec<Var>, Vec<Var>);

fn encode(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    input: EncoderInput<'_>,
    dropout: &mut Dropout<'_>,
) -> Result<Encoded> {
    let mask = match input.valid {
        Some(valid) => {
            if valid.len() != input.tokens.len() {
                return Err(Error::InvalidArgument(
                    "valid mask length differs from tokens".into(),
                ));
            }
            attention_mask(valid).map(|m| tape.constant(m))
        }
        None => None,
    };
    let h0 = embed(tape, config, vars, input.tokens, input.segments)?;
    let mut h = dropout.apply(tape, h0, config.dropout);
    let mut attentions = Vec::with_capacity(config.num_layers);
    let mut hiddens = Vec::with_capacity(config.num_layers);
    for layer in &vars.layers {
        let (a, h_mid) = mha_layer(tape, config, layer, h, mask, dropout)?;
        h = ffn_layer(tape, config, layer, h_mid, dropout)?;
        attentions.push(a);
        hiddens.push(h);
    }
    Ok((h0, attentions, hiddens))
}

/// Vocabulary logits (`|masked| × vocab`) at the masked positions, decoded
/// through the tied token-embedding matrix. `None` when nothing is masked.
pub fn mlm_forward(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    input: EncoderInput<'_>,
    masked_positions: &[usize],
    dropout: &mut Dropout<'_>,
) -> Result<Option<Var>> {
    if let Some(&p) = masked_positions.iter().find(|&&p| p >= input.tokens.len()) {
        return Err(Error::InvalidArgument(format!(
            "masked position {p} outside sequence of length {}",
            input.tokens.len()
        )));
    }
    if masked_positions.is_empty() {
        return Ok(None);
    }
    let (h0, _, hiddens) = encode(tape, config, vars, input, dropout)?;
    let last = hiddens.last().copied().unwrap_or(h0);
    let picked = tape.gather_rows(last, masked_positions)?;
    let logits = tape.matmul_nt(picked, vars.token_embeddings)?;
    Ok(Some(tape.add_row(logits, vars.mlm_bias)?))
}

/// Convenience: forward pass with frozen weights on a fresh tape, returning
/// owned copies of the trace.
pub fn trace_values(
    config: &ModelConfig,
    weights: &TransformerWeights,
    input: EncoderInput<'_>,
) -> Result<TraceValues> {
    let mut tape = Tape::new();
    let vars = weights.register(&mut tape, false);
    let trace = encoder_forward(&mut tape, config, &vars, input, &mut Dropout::off())?;
    Ok(TraceValues::from_trace(&tape, &trace))
}

/// Owned copy of a [`ForwardTrace`], detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceValues {
    pub embedding_output: Tensor,
    pub attentions: Vec<Tensor>,
    pub hiddens: Vec<Tensor>,
    pub logits: Tensor,
}

impl TraceValues {
    pub fn from_trace(tape: &Tape, trace: &ForwardTrace) -> Self {
        let get = |v: Var| tape.value(v).clone().with_requires_grad(false);
        TraceValues {
            embedding_output: get(trace.embedding_output),
            attentions: trace.attentions.iter().map(|&v| get(v)).collect(),
            hiddens: trace.hiddens.iter().map(|&v| get(v)).collect(),
            logits: get(trace.logits),
        }
    }

    /// Re-records the values on `tape` as constants.
    pub fn to_tape(&self, tape: &mut Tape) -> ForwardTrace {
        ForwardTrace {
            embedding_output: tape.constant(self.embedding_output.clone()),
            attentions: self.attentions.iter().map(|t| tape.constant(t.clone())).collect(),
            hiddens: self.hiddens.iter().map(|t| tape.constant(t.clone())).collect(),
            logits: tape.constant(self.logits.clone()),
        }
    }
}
