use super::config::ModelConfig;
use serde::Serialize;

/// Parameter total under the backbone counting convention: token, position
/// and segment embeddings, the embedding layer norm, per-layer Q/K/V/O
/// projections with biases, the feed-forward block with biases, two layer
/// norms per layer, and the pooler. Task and masked-token heads are excluded.
pub fn param_count(config: &ModelConfig) -> u64 {
    let d = config.hidden_size as u64;
    let embeddings = (config.vocab_size + config.max_seq_len + config.type_vocab_size) as u64 * d + 2 * d;
    let pooler = d * d + d;
    embeddings + config.num_layers as u64 * per_layer_params(config) + pooler
}

/// Parameters contributed by one encoder layer.
pub fn per_layer_params(config: &ModelConfig) -> u64 {
    let d = config.hidden_size as u64;
    let f = config.ffn_size as u64;
    let attention = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let norms = 4 * d;
    attention + ffn + norms
}

/// Multiply-accumulate counts for one forward pass, by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopEstimate {
    pub qkv_projection: u64,
    pub attention_scores: u64,
    pub attention_context: u64,
    pub output_projection: u64,
    pub ffn: u64,
    pub head: u64,
}

impl FlopEstimate {
    pub fn total(&self) -> u64 {
        self.qkv_projection
            + self.attention_scores
            + self.attention_context
            + self.output_projection
            + self.ffn
            + self.head
    }
}

/// Analytic multiply-accumulate count for a forward pass over `seq_len`
/// tokens. Embedding lookups and normalizations are not counted.
pub fn flop_estimate(config: &ModelConfig, seq_len: usize) -> FlopEstimate {
    let s = seq_len as u64;
    let d = config.hidden_size as u64;
    let f = config.ffn_size as u64;
    let l = config.num_layers as u64;
    FlopEstimate {
        qkv_projection: l * 3 * s * d * d,
        attention_scores: l * s * s * d,
        attention_context: l * s * s * d,
        output_projection: l * s * d * d,
        ffn: l * 2 * s * d * f,
        head: d * d + d * config.output_size() as u64,
    }
}
