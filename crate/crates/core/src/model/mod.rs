//! Post-layer-norm transformer encoder with exposed attention maps.

mod config;
mod count;
mod forward;
mod weights;

pub use config::{ModelConfig, TaskKind};
pub use count::{flop_estimate, param_count, per_layer_params, FlopEstimate};
pub use forward::{
    attention_mask, embed, encoder_forward, ffn_layer, mha_layer, mlm_forward, trace_values, Dropout,
    EncoderInput, ForwardTrace, TraceValues,
};
pub use weights::{parameter_shapes, EncoderParams, LayerParams, ModelVars, TransformerWeights};
