use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Learning-rate warmup, as an absolute step count or a share of the stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warmup {
    Steps(usize),
    Proportion(f64),
}

impl Warmup {
    pub fn steps(self, total_steps: usize) -> usize {
        match self {
            Warmup::Steps(n) => n.min(total_steps),
            Warmup::Proportion(p) => ((total_steps as f64) * p).round() as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup: Warmup,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64, batch_size: usize, warmup: Warmup) -> Self {
        OptimizerConfig {
            learning_rate,
            batch_size,
            warmup,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("optimizer: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Warmup::Proportion(p) = self.warmup {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("warmup proportion {p} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) || self.weight_decay < 0.0 {
            return bad("epsilon must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Learning rate at 1-based `step` of `total_steps`: linear warmup to the
    /// peak, then linear decay to zero at the last step.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup.steps(total_steps);
        let step = step.max(1) as f64;
        if warmup > 0 && step <= warmup as f64 {
            return self.learning_rate * step / warmup as f64;
        }
        let decay = (total_steps - warmup) as f64;
        if decay <= 0.0 {
            return self.learning_rate;
        }
        // One extra step keeps the last update non-zero.
        self.learning_rate * (total_steps as f64 - step + 1.0) / decay
    }
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update of `param` from its accumulated gradient at learning rate
/// `lr`, with bias correction for 1-based `step`. A missing gradient counts
/// as zero.
pub fn adam_step(
    param: &mut Tensor,
    state: &mut AdamState,
    config: &OptimizerConfig,
    step: usize,
    lr: f64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument("adam step index is 1-based".into()));
    }
    if state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::shape("adam_step", &[state.m.len()], param.shape()));
    }
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let grad = param.grad().map(<[f64]>::to_vec);
    let data = param.data_mut();
    for i in 0..data.len() {
        let g = grad.as_ref().map_or(0.0, |g| g[i]);
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let mut update = m_hat / (v_hat.sqrt() + config.epsilon);
        if config.weight_decay > 0.0 {
            update += config.weight_decay * data[i];
        }
        data[i] -= lr * update;
    }
    Ok(())
}

/// Adam over a fixed, ordered list of tensors with the stage's learning-rate
/// schedule.
#[derive(Clone, Debug)]
pub struct Adam {
    config: OptimizerConfig,
    total_steps: usize,
    step: usize,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            total_steps,
            step: 0,
            states: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Updates every tensor from its gradient and returns the learning rate
    /// used. The tensor list must keep the same order across calls.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>) -> Result<f64> {
        self.step += 1;
        let lr = self.config.learning_rate_at(self.step, self.total_steps);
        for (i, p) in params.into_iter().enumerate() {
            if i == self.states.len() {
                self.states.push(AdamState::zeros(p.len()));
            }
            adam_step(p, &mut self.states[i], &self.config, self.step, lr)?;
        }
        Ok(lr)
    }
}
