#![allow(dead_code)]

pub mod grad_cases;
pub mod losses;

use pdistill::model::{ModelConfig, ModelVars, TransformerWeights};
use pdistill::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, -scale, scale, &mut rng(seed))
}

/// Weights with every entry drawn uniformly from `[-scale, scale]`, layer
/// norm gains centred on one. Larger than the default init so gradient
/// checks see well-conditioned, non-vanishing derivatives.
pub fn random_weights(config: &ModelConfig, scale: f64, seed: u64) -> TransformerWeights {
    let mut r = rng(seed);
    let mut w = TransformerWeights::init(config, &mut r).unwrap();
    w.for_each_mut(|name, t| {
        let gain = name.ends_with("ln_gain");
        for v in t.data_mut() {
            *v = r.gen_range(-scale..scale) + if gain { 1.0 } else { 0.0 };
        }
    });
    w
}

/// Parameters in manifest order.
pub fn flatten(weights: &TransformerWeights) -> Vec<Tensor> {
    weights.named().into_iter().map(|(_, t)| t.clone()).collect()
}

/// Rebuilds the variable tree of `template` from vars in manifest order.
pub fn vars_like(template: &TransformerWeights, vars: &[Var]) -> ModelVars {
    let mut it = vars.iter().copied();
    template.map(|_, _| it.next().expect("one var per parameter"))
}

/// Key biases shift every score of a query row by the same amount, which
/// the softmax ignores: their gradient is identically zero, and a relative
/// finite-difference comparison would only measure rounding noise.
pub fn is_key_bias(name: &str) -> bool {
    name.ends_with("key_bias")
}

/// Parameters in manifest order, without key biases.
pub fn flatten_checkable(weights: &TransformerWeights) -> Vec<Tensor> {
    weights
        .named()
        .into_iter()
        .filter(|(n, _)| !is_key_bias(n))
        .map(|(_, t)| t.clone())
        .collect()
}

/// Like [`vars_like`] for vars from [`flatten_checkable`]; key biases are
/// recorded as constants taken from `template`.
pub fn bind_checkable(tape: &mut Tape, template: &TransformerWeights, vars: &[Var]) -> ModelVars {
    let mut it = vars.iter().copied();
    template.map(|n, t| {
        if is_key_bias(n) {
            tape.constant(t.clone())
        } else {
            it.next().expect("one var per checked parameter")
        }
    })
}

/// Turns any tensor into a scalar with a fixed random weighting, so every
/// output element matters to the gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> pdistill::Result<Var> {
    let shape = tape.shape(x).to_vec();
    let w = tape.constant(uniform(&shape, 1.0, seed));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

pub fn tokens(n: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(0..vocab as u32)).collect()
}
