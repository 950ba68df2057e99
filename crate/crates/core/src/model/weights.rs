use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

const INIT_STD: f64 = 0.02;

/// Parameters of one encoder layer. `T` is [`Tensor`] for stored weights
/// and [`Var`] once registered on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub query: T,
    pub query_bias: T,
    pub key: T,
    pub key_bias: T,
    pub value: T,
    pub value_bias: T,
    pub output: T,
    pub output_bias: T,
    pub attn_ln_gain: T,
    pub attn_ln_bias: T,
    pub ffn_in: T,
    pub ffn_in_bias: T,
    pub ffn_out: T,
    pub ffn_out_bias: T,
    pub ffn_ln_gain: T,
    pub ffn_ln_bias: T,
}

/// All encoder parameters, including the pooler, the task head and the
/// masked-token output bias (the masked-token decoder is tied to the token
/// embeddings).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub token_embeddings: T,
    pub position_embeddings: T,
    pub segment_embeddings: T,
    pub embedding_ln_gain: T,
    pub embedding_ln_bias: T,
    pub layers: Vec<LayerParams<T>>,
    pub pooler: T,
    pub pooler_bias: T,
    pub classifier: T,
    pub classifier_bias: T,
    pub mlm_bias: T,
}

pub type TransformerWeights = EncoderParams<Tensor>;
pub type ModelVars = EncoderParams<Var>;

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(
            query,
            query_bias,
            key,
            key_bias,
            value,
            value_bias,
            output,
            output_bias,
            attn_ln_gain,
            attn_ln_bias,
            ffn_in,
            ffn_in_bias,
            ffn_out,
            ffn_out_bias,
            ffn_ln_gain,
            ffn_ln_bias
        )
    };
}

impl<T> LayerParams<T> {
    fn map<'a, U>(&'a self, prefix: &str, f: &mut impl FnMut(&str, &'a T) -> U) -> LayerParams<U> {
        macro_rules! build {
            ($($field:ident),*) => {
                LayerParams { $($field: f(&format!("{prefix}.{}", stringify!($field)), &self.$field)),* }
            };
        }
        layer_fields!(build)
    }

    fn values_mut(&mut self) -> Vec<&mut T> {
        macro_rules! collect {
            ($($field:ident),*) => {
                vec![$(&mut self.$field),*]
            };
        }
        layer_fields!(collect)
    }

    fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut T)) {
        macro_rules! visit {
            ($($field:ident),*) => {
                {$(f(&format!("{prefix}.{}", stringify!($field)), &mut self.$field);)*}
            };
        }
        layer_fields!(visit)
    }
}

impl<T> EncoderParams<T> {
    /// Applies `f` to every parameter in manifest order.
    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> EncoderParams<U> {
        EncoderParams {
            token_embeddings: f("embeddings.token", &self.token_embeddings),
            position_embeddings: f("embeddings.position", &self.position_embeddings),
            segment_embeddings: f("embeddings.segment", &self.segment_embeddings),
            embedding_ln_gain: f("embeddings.ln_gain", &self.embedding_ln_gain),
            embedding_ln_bias: f("embeddings.ln_bias", &self.embedding_ln_bias),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("layer.{i}"), &mut f))
                .collect(),
            pooler: f("pooler.weight", &self.pooler),
            pooler_bias: f("pooler.bias", &self.pooler_bias),
            classifier: f("classifier.weight", &self.classifier),
            classifier_bias: f("classifier.bias", &self.classifier_bias),
            mlm_bias: f("mlm.bias", &self.mlm_bias),
        }
    }

    /// Visits every parameter mutably in manifest order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        f("embeddings.token", &mut self.token_embeddings);
        f("embeddings.position", &mut self.position_embeddings);
        f("embeddings.segment", &mut self.segment_embeddings);
        f("embeddings.ln_gain", &mut self.embedding_ln_gain);
        f("embeddings.ln_bias", &mut self.embedding_ln_bias);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.for_each_mut(&format!("layer.{i}"), &mut f);
        }
        f("pooler.weight", &mut self.pooler);
        f("pooler.bias", &mut self.pooler_bias);
        f("classifier.weight", &mut self.classifier);
        f("classifier.bias", &mut self.classifier_bias);
        f("mlm.bias", &mut self.mlm_bias);
    }

    /// Every parameter in manifest order.
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![
            &mut self.token_embeddings,
            &mut self.position_embeddings,
            &mut self.segment_embeddings,
            &mut self.embedding_ln_gain,
            &mut self.embedding_ln_bias,
        ];
        for l in &mut self.layers {
            out.extend(l.values_mut());
        }
        out.extend([
            &mut self.pooler,
            &mut self.pooler_bias,
            &mut self.classifier,
            &mut self.classifier_bias,
            &mut self.mlm_bias,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(|n, _| out.push(n.to_string()));
        out
    }
}

/// Expected shape of every parameter for `config`.
pub fn parameter_shapes(config: &ModelConfig) -> EncoderParams<Vec<usize>> {
    let d = config.hidden_size;
    let f = config.ffn_size;
    let layer = LayerParams {
        query: vec![d, d],
        query_bias: vec![d],
        key: vec![d, d],
        key_bias: vec![d],
        value: vec![d, d],
        value_bias: vec![d],
        output: vec![d, d],
        output_bias: vec![d],
        attn_ln_gain: vec![d],
        attn_ln_bias: vec![d],
        ffn_in: vec![d, f],
        ffn_in_bias: vec![f],
        ffn_out: vec![f, d],
        ffn_out_bias: vec![d],
        ffn_ln_gain: vec![d],
        ffn_ln_bias: vec![d],
    };
    EncoderParams {
        token_embeddings: vec![config.vocab_size, d],
        position_embeddings: vec![config.max_seq_len, d],
        segment_embeddings: vec![config.type_vocab_size, d],
        embedding_ln_gain: vec![d],
        embedding_ln_bias: vec![d],
        layers: vec![layer; config.num_layers],
        pooler: vec![d, d],
        pooler_bias: vec![d],
        classifier: vec![d, config.output_size()],
        classifier_bias: vec![config.output_size()],
        mlm_bias: vec![config.vocab_size],
    }
}

impl TransformerWeights {
    /// Truncated-normal matrices (std 0.02), zero biases, unit layer-norm
    /// gains.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(parameter_shapes(config).map(|name, shape| {
            if name.ends_with("ln_gain") {
                Tensor::full(shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(shape)
            } else {
                Tensor::truncated_normal(shape, INIT_STD, rng)
            }
        }))
    }

    /// Every parameter set to zero, layer-norm gains included.
    pub fn zeros(config: &ModelConfig) -> Self {
        parameter_shapes(config).map(|_, shape| Tensor::zeros(shape))
    }

    /// Rebuilds weights from a named list, checking names and shapes.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let mut out = TransformerWeights::zeros(config);
        let mut it = named.into_iter();
        let mut err = None;
        out.for_each_mut(|want, slot| {
            if err.is_some() {
                return;
            }
            match it.next() {
                None => err = Some(Error::Format(format!("missing tensor {want}"))),
                Some((name, _)) if name != want => {
                    err = Some(Error::Format(format!("expected tensor {want}, found {name}")))
                }
                Some((name, t)) if t.shape() != slot.shape() => {
                    err = Some(Error::Format(format!(
                        "tensor {name} has shape {:?}, config requires {:?}",
                        t.shape(),
                        slot.shape()
                    )))
                }
                Some((_, t)) => *slot = t,
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some((name, _)) = it.next() {
            return Err(Error::Format(format!("unexpected extra tensor {name}")));
        }
        Ok(out)
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.map(|n, t| out.push((n.to_string(), t)));
        out
    }

    /// Records every parameter on `tape` as a trainable or frozen leaf.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        self.map(|_, t| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
    }

    /// Adds the tape gradients of `vars` into the stored gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &ModelVars) {
        let mut grads = Vec::new();
        vars.map(|_, &v| grads.push(v));
        let mut it = grads.into_iter();
        self.for_each_mut(|_, t| {
            let v = it.next().expect("vars mirror weights");
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        });
    }

    pub fn zero_grad(&mut self) {
        self.for_each_mut(|_, t| t.zero_grad());
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.map(|_, t| n += t.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.map(|_, t| ok &= t.is_finite());
        ok
    }
}
