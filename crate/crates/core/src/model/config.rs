use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// What the task head predicts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

/// Encoder hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub ffn_size: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_num_labels")]
    pub num_labels: usize,
    #[serde(default)]
    pub task_kind: TaskKind,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default)]
    pub dropout: f64,
}

fn default_type_vocab() -> usize {
    2
}

fn default_num_labels() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

impl ModelConfig {
    /// Builds a classification config with defaults for the optional fields.
    pub fn new(
        num_layers: usize,
        hidden_size: usize,
        ffn_size: usize,
        num_heads: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        ModelConfig {
            num_layers,
            hidden_size,
            ffn_size,
            num_heads,
            vocab_size,
            max_seq_len,
            type_vocab_size: default_type_vocab(),
            num_labels: default_num_labels(),
            task_kind: TaskKind::Classification,
            layer_norm_eps: default_eps(),
            dropout: 0.0,
        }
    }

    /// 12-layer, 768-wide teacher backbone.
    pub fn bert_base() -> Self {
        ModelConfig::new(12, 768, 3072, 12, 30522, 512)
    }

    /// 4-layer, 312-wide student backbone.
    pub fn tiny_student() -> Self {
        ModelConfig::new(4, 312, 1200, 12, 30522, 512)
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn output_size(&self) -> usize {
        match self.task_kind {
            TaskKind::Classification => self.num_labels,
            TaskKind::Regression => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_size", self.hidden_size),
            ("ffn_size", self.ffn_size),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("type_vocab_size", self.type_vocab_size),
            ("num_labels", self.num_labels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.task_kind == TaskKind::Classification && self.num_labels < 2 {
            return Err(Error::Config("classification needs num_labels >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}
