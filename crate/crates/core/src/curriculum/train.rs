use super::optim::{Adam, OptimizerConfig};
use super::stage::{DataKind, StageSpec, TeacherKind};
use crate::data::{mask_tokens, sample_consecutive_pairs, BatchItem, Encoded, GeneralCorpus, Vocab};
use crate::distill::{stage_loss, DistillExample, Label, LayerMap, MappingParams, Objective};
use crate::error::{Error, Result};
use crate::metrics::{self, Confusion};
use crate::model::{
    encoder_forward, mlm_forward, Dropout, ModelConfig, ModelVars, TaskKind, TraceValues, TransformerWeights,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// A frozen teacher: configuration and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub config: ModelConfig,
    pub weights: TransformerWeights,
}

/// A student with its alignment matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    pub config: ModelConfig,
    pub weights: TransformerWeights,
    pub maps: MappingParams,
}

impl Student {
    /// Fresh student for `teacher`: random weights from `seed` and
    /// padded-identity alignment matrices.
    pub fn init(config: &ModelConfig, teacher: &ModelConfig, seed: u64) -> Result<Self> {
        LayerMap::new(teacher.num_layers, config.num_layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Student {
            config: config.clone(),
            weights: TransformerWeights::init(config, &mut rng)?,
            maps: MappingParams::new(teacher, config, true),
        })
    }
}

/// Teachers available to a stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct Teachers<'a> {
    pub pretrained: Option<&'a Teacher>,
    pub finetuned: Option<&'a Teacher>,
}

impl<'a> Teachers<'a> {
    pub fn get(&self, kind: TeacherKind) -> Result<&'a Teacher> {
        match kind {
            TeacherKind::Pretrained => self.pretrained,
            TeacherKind::Finetuned => self.finetuned,
        }
        .ok_or_else(|| Error::Config(format!("stage needs the {kind:?} teacher, none given")))
    }
}

/// Framed inputs for the two data kinds.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageData<'a> {
    pub general: &'a [Encoded],
    pub task: &'a [Encoded],
}

impl<'a> StageData<'a> {
    pub fn get(&self, kind: DataKind) -> Result<&'a [Encoded]> {
        let pool = match kind {
            DataKind::General => self.general,
            DataKind::Task => self.task,
        };
        if pool.is_empty() {
            return Err(Error::Data(format!("stage needs {kind:?} data, none given")));
        }
        Ok(pool)
    }
}

/// Settings shared by the stages of one run.
#[derive(Clone, Copy, Debug)]
pub struct TrainSettings<'a> {
    pub objective: Objective,
    /// Evaluate on `dev` every this many steps; zero disables.
    pub eval_interval: usize,
    pub dev: Option<&'a [Encoded]>,
    /// Run seed, mixed into every stage's sampling seed.
    pub seed: u64,
}

impl TrainSettings<'_> {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        TrainSettings {
            objective: Objective::new(kind),
            eval_interval: 0,
            dev: None,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub metric: f64,
}

/// Loss series and evaluations from one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub seed: u64,
    /// Total loss per step.
    pub loss: Vec<f64>,
    /// Component series; a component absent from the objective stays empty.
    pub latent: Vec<f64>,
    pub soft: Vec<f64>,
    pub hard: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    fn new(stage: &str, seed: u64) -> Self {
        TrainReport {
            stage: stage.to_string(),
            seed,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> usize {
        self.loss.len()
    }
}

/// Metrics of a model on labelled examples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub mcc: f64,
    pub pearson: Option<f64>,
}

impl EvalMetrics {
    /// Accuracy for classification, Pearson correlation for regression.
    pub fn headline(&self) -> f64 {
        self.pearson.unwrap_or(self.accuracy)
    }
}

/// Weights registered once as constants, reused across many inputs.
pub struct FrozenModel<'a> {
    config: &'a ModelConfig,
    tape: Tape,
    vars: ModelVars,
    base: usize,
}

impl<'a> FrozenModel<'a> {
    pub fn new(config: &'a ModelConfig, weights: &TransformerWeights) -> Self {
        let mut tape = Tape::new();
        let vars = weights.register(&mut tape, false);
        let base = tape.len();
        FrozenModel {
            config,
            tape,
            vars,
            base,
        }
    }

    pub fn trace(&mut self, example: &Encoded) -> Result<TraceValues> {
        let trace = encoder_forward(
            &mut self.tape,
            self.config,
            &self.vars,
            example.input(),
            &mut Dropout::off(),
        );
        let out = trace.map(|t| TraceValues::from_trace(&self.tape, &t));
        self.tape.truncate(self.base);
        out
    }

    pub fn logits(&mut self, example: &Encoded) -> Result<Vec<f64>> {
        Ok(self.trace(example)?.logits.into_data())
    }
}

/// Predicted class (argmax) or score per example.
pub fn predict(config: &ModelConfig, weights: &TransformerWeights, examples: &[Encoded]) -> Result<Vec<f64>> {
    let mut model = FrozenModel::new(config, weights);
    examples
        .iter()
        .map(|e| {
            let z = model.logits(e)?;
            Ok(match config.task_kind {
                TaskKind::Regression => z[0],
                TaskKind::Classification => argmax(&z) as f64,
            })
        })
        .collect()
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Metrics of `weights` on labelled `examples`.
pub fn evaluate(
    config: &ModelConfig,
    weights: &TransformerWeights,
    examples: &[Encoded],
) -> Result<EvalMetrics> {
    let preds = predict(config, weights, examples)?;
    let labels = examples
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| Error::Data("evaluation needs labelled examples".into()))
        })
        .collect::<Result<Vec<Label>>>()?;
    match config.task_kind {
        TaskKind::Classification => {
            let gold: Vec<usize> = labels
                .iter()
                .map(|l| match *l {
                    Label::Class(c) => Ok(c),
                    Label::Score(_) => Err(Error::Data("score label on a classification task".into())),
                })
                .collect::<Result<_>>()?;
            let pred: Vec<usize> = preds.iter().map(|&p| p as usize).collect();
            let (f1, mcc) = if config.num_labels == 2 {
                let c = Confusion::from_predictions(&pred, &gold)?;
                (c.f1(), c.mcc())
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(EvalMetrics {
                accuracy: metrics::accuracy(&pred, &gold)?,
                f1,
                mcc,
                pearson: None,
            })
        }
        TaskKind::Regression => {
            let gold: Vec<f64> = labels
                .iter()
                .map(|l| match *l {
                    Label::Score(v) => Ok(v),
                    Label::Class(_) => Err(Error::Data("class label on a regression task".into())),
                })
                .collect::<Result<_>>()?;
            Ok(EvalMetrics {
                accuracy: f64::NAN,
                f1: f64::NAN,
                mcc: f64::NAN,
                pearson: Some(metrics::pearson(&preds, &gold)?),
            })
        }
    }
}

/// Cycles through shuffled epochs of `0..n`.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Sampler { order, pos: 0, rng }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn mix_seed(run: u64, stage: u64) -> u64 {
    run.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stage.rotate_left(17) ^ 0x5EED
}

fn dropout<'r>(config: &ModelConfig, rng: &'r mut ChaCha8Rng) -> Dropout<'r> {
    if config.dropout > 0.0 {
        Dropout::with_rng(rng)
    } else {
        Dropout::off()
    }
}

/// Teacher outputs for the student-aligned layers of one input.
struct Target {
    attentions: Vec<Tensor>,
    hiddens: Vec<Tensor>,
    logits: Tensor,
}

/// Computes teacher targets on first use and keeps them for the stage.
struct TargetCache<'a> {
    teacher: FrozenModel<'a>,
    layers: Vec<usize>,
    slots: Vec<Option<Target>>,
}

impl<'a> TargetCache<'a> {
    fn new(teacher: &'a Teacher, map: &LayerMap, pool: usize) -> Result<Self> {
        let layers = (1..=map.student_layers())
            .map(|l| map.teacher_layer(l))
            .collect::<Result<_>>()?;
        Ok(TargetCache {
            teacher: FrozenModel::new(&teacher.config, &teacher.weights),
            layers,
            slots: (0..pool).map(|_| None).collect(),
        })
    }

    fn get(&mut self, index: usize, example: &Encoded) -> Result<&Target> {
        if self.slots[index].is_none() {
            let mut t = self.teacher.trace(example)?;
            let pick = |v: &mut Vec<Tensor>, k: usize| std::mem::replace(&mut v[k - 1], Tensor::scalar(0.0));
            let attentions = self.layers.iter().map(|&k| pick(&mut t.attentions, k)).collect();
            let hiddens = self.layers.iter().map(|&k| pick(&mut t.hiddens, k)).collect();
            self.slots[index] = Some(Target {
                attentions,
                hiddens,
                logits: t.logits,
            });
        }
        Ok(self.slots[index].as_ref().expect("filled above"))
    }
}

fn require_labels(pool: &[Encoded], what: &str) -> Result<()> {
    if pool.iter().any(|e| e.label.is_none()) {
        return Err(Error::Data(format!("{what} needs labelled examples")));
    }
    Ok(())
}

/// Trains `student` (and its alignment matrices) on one stage of the
/// curriculum. Teachers are only read.
pub fn train_stage(
    stage: &StageSpec,
    student: &mut Student,
    teachers: Teachers<'_>,
    data: StageData<'_>,
    settings: &TrainSettings<'_>,
) -> Result<TrainReport> {
    if let Some(p) = stage.problems().first() {
        return Err(Error::Schedule(format!("stage {}: {p}", stage.name)));
    }
    let teacher = teachers.get(stage.teacher)?;
    let pool = data.get(stage.data)?;
    if stage.alpha == crate::distill::Alpha::One {
        require_labels(pool, &format!("stage {}", stage.name))?;
    }
    let map = LayerMap::new(teacher.config.num_layers, student.config.num_layers)?;
    student.maps.check(&teacher.config, &student.config)?;
    if teacher.config.output_size() != student.config.output_size() {
        return Err(Error::Config("teacher and student heads differ in size".into()));
    }

    let started = Instant::now();
    let seed = mix_seed(settings.seed, stage.optimizer.seed);
    let mut sampler = Sampler::new(pool.len(), seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD5);
    let mut targets = TargetCache::new(teacher, &map, pool.len())?;
    let mut adam = Adam::new(stage.optimizer.clone(), stage.steps)?;
    let mut report = TrainReport::new(&stage.name, settings.seed);

    for step in 1..=stage.steps {
        let batch = sampler.batch(stage.optimizer.batch_size);
        let mut tape = Tape::new();
        let svars = student.weights.register(&mut tape, true);
        let mvars = student.maps.register(&mut tape);
        let mut traces = Vec::with_capacity(batch.len());
        let mut consts: Vec<(Vec<Var>, Vec<Var>, Var)> = Vec::with_capacity(batch.len());
        for &i in &batch {
            let ex = &pool[i];
            let mut drop = dropout(&student.config, &mut drop_rng);
            traces.push(encoder_forward(
                &mut tape,
                &student.config,
                &svars,
                ex.input(),
                &mut drop,
            )?);
            let t = targets.get(i, ex)?;
            let atts = t.attentions.iter().map(|a| tape.constant(a.clone())).collect();
            let hids = t.hiddens.iter().map(|h| tape.constant(h.clone())).collect();
            let logits = tape.constant(t.logits.clone());
            consts.push((atts, hids, logits));
        }
        let examples: Vec<DistillExample<'_>> = batch
            .iter()
            .zip(&traces)
            .zip(&consts)
            .map(|((&i, trace), (atts, hids, logits))| DistillExample {
                teacher_attentions: atts,
                teacher_hiddens: hids,
                teacher_logits: *logits,
                student: trace,
                label: pool[i].label,
            })
            .collect();
        let loss = stage_loss(&mut tape, &examples, stage.alpha, &mvars, settings.objective)?;
        tape.backward(loss.total)?;
        report.loss.push(tape.item(loss.total));
        report.latent.push(tape.item(loss.latent));
        if let (Some(s), Some(h)) = (loss.soft, loss.hard) {
            report.soft.push(tape.item(s));
            report.hard.push(tape.item(h));
        }
        student.weights.accumulate_grads(&tape, &svars);
        student.maps.accumulate_grads(&tape, &mvars);
        drop(tape);
        let trainable_maps = student.maps.trainable;
        let params = student
            .weights
            .values_mut()
            .into_iter()
            .chain(student.maps.tensors_mut().filter(|_| trainable_maps));
        report.learning_rate.push(adam.step(params)?);
        student.weights.zero_grad();
        student.maps.tensors_mut().for_each(Tensor::zero_grad);
        if !report.loss.last().is_some_and(|l| l.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "stage {} diverged at step {step}",
                stage.name
            )));
        }
        maybe_eval(
            &mut report,
            step,
            stage.steps,
            settings,
            &student.config,
            &student.weights,
        )?;
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

fn maybe_eval(
    report: &mut TrainReport,
    step: usize,
    total: usize,
    settings: &TrainSettings<'_>,
    config: &ModelConfig,
    weights: &TransformerWeights,
) -> Result<()> {
    let Some(dev) = settings.dev else {
        return Ok(());
    };
    let due = settings.eval_interval > 0 && (step.is_multiple_of(settings.eval_interval) || step == total);
    if due {
        let metric = evaluate(config, weights, dev)?.headline();
        report.evals.push(EvalPoint { step, metric });
    }
    Ok(())
}

/// Masked-token pretraining settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSettings {
    pub steps: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    pub max_len: usize,
    /// Feed consecutive sentence pairs instead of single sentences.
    #[serde(default)]
    pub pairs: bool,
}

fn default_mask_rate() -> f64 {
    0.15
}

/// Framed pretraining inputs drawn from the corpus.
fn pretrain_pool(corpus: &GeneralCorpus, settings: &PretrainSettings, seed: u64) -> Result<Vec<Encoded>> {
    if settings.pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAB);
        let n = corpus.num_sentences().max(1);
        sample_consecutive_pairs(corpus, n, &mut rng)?
            .into_iter()
            .map(|(a, b)| crate::data::encode(&BatchItem::pair(a, b), settings.max_len))
            .collect()
    } else {
        corpus
            .sentences()
            .map(|s| crate::data::encode(&BatchItem::single(s), settings.max_len))
            .collect()
    }
}

/// Mean masked-token cross entropy of one batch on a fresh tape, or `None`
/// when no position was selected.
fn mlm_batch(
    tape: &mut Tape,
    config: &ModelConfig,
    vars: &ModelVars,
    inputs: &[&Encoded],
    vocab: &Vocab,
    mask_rate: f64,
    mask_rng: &mut ChaCha8Rng,
    drop_rng: &mut ChaCha8Rng,
) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    for ex in inputs {
        let m = mask_tokens(&ex.tokens, vocab, mask_rate, mask_rng)?;
        let masked = Encoded {
            tokens: m.tokens,
            segments: ex.segments.clone(),
            label: None,
        };
        let mut drop = dropout(config, drop_rng);
        if let Some(logits) = mlm_forward(tape, config, vars, masked.input(), &m.positions, &mut drop)? {
            let targets: Vec<usize> = m.originals.iter().map(|&t| t as usize).collect();
            terms.push(tape.cross_entropy(logits, &targets)?);
        }
    }
    if terms.is_empty() {
        return Ok(None);
    }
    let n = terms.len() as f64;
    let sum = crate::distill::sum_scalars(tape, &terms)?;
    Ok(Some(tape.scale(sum, 1.0 / n)))
}

/// Average masked-token loss of `weights` over `corpus`, with masks drawn
/// from `seed` so that different weights see the same corruption.
pub fn mlm_loss(
    config: &ModelConfig,
    weights: &TransformerWeights,
    corpus: &GeneralCorpus,
    vocab: &Vocab,
    settings: &PretrainSettings,
    seed: u64,
) -> Result<f64> {
    let pool = pretrain_pool(corpus, settings, seed)?;
    let mut tape = Tape::new();
    let vars = weights.register(&mut tape, false);
    let base = tape.len();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval_config = config.clone();
    eval_config.dropout = 0.0;
    let (mut total, mut count) = (0.0, 0usize);
    for ex in &pool {
        let loss = mlm_batch(
            &mut tape,
            &eval_config,
            &vars,
            &[ex],
            vocab,
            settings.mask_rate,
            &mut mask_rng,
            &mut drop_rng,
        )?;
        if let Some(l) = loss {
            total += tape.item(l);
            count += 1;
        }
        tape.truncate(base);
    }
    if count == 0 {
        return Err(Error::Data("no position was ever masked".into()));
    }
    Ok(total / count as f64)
}

/// Trains a teacher from scratch by masked-token prediction on `corpus`.
/// Steps where no token happens to be masked are skipped and recorded as NaN.
pub fn pretrain_teacher(
    config: &ModelConfig,
    corpus: &GeneralCorpus,
    vocab: &Vocab,
    opt: &OptimizerConfig,
    settings: &PretrainSettings,
    seed: u64,
) -> Result<(TransformerWeights, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot pretrain on an empty corpus".into()));
    }
    if config.vocab_size < vocab.len() {
        return Err(Error::Config(format!(
            "model vocabulary {} smaller than data vocabulary {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = TransformerWeights::init(config, &mut rng)?;
    let pool = pretrain_pool(corpus, settings, seed)?;
    let seed = mix_seed(seed, opt.seed);
    let mut sampler = Sampler::new(pool.len(), seed);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3A5C);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD5);
    let mut adam = Adam::new(opt.clone(), settings.steps)?;
    let mut report = TrainReport::new("pretrain", seed);
    for _ in 0..settings.steps {
        let batch: Vec<&Encoded> = sampler
            .batch(opt.batch_size)
            .into_iter()
            .map(|i| &pool[i])
            .collect();
        let mut tape = Tape::new();
        let vars = weights.register(&mut tape, true);
        let loss = mlm_batch(
            &mut tape,
            config,
            &vars,
            &batch,
            vocab,
            settings.mask_rate,
            &mut mask_rng,
            &mut drop_rng,
        )?;
        let Some(loss) = loss else {
            report.loss.push(f64::NAN);
            continue;
        };
        tape.backward(loss)?;
        report.loss.push(tape.item(loss));
        weights.accumulate_grads(&tape, &vars);
        report.learning_rate.push(adam.step(weights.values_mut())?);
        weights.zero_grad();
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((weights, report))
}

/// Supervised training of a copy of `pretrained` on labelled task data,
/// with the hard-label loss only.
pub fn finetune_teacher(
    config: &ModelConfig,
    pretrained: &TransformerWeights,
    train: &[Encoded],
    opt: &OptimizerConfig,
    steps: usize,
    settings: &TrainSettings<'_>,
) -> Result<(TransformerWeights, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Data("finetuning needs task data".into()));
    }
    require_labels(train, "finetuning")?;
    let started = Instant::now();
    let mut weights = pretrained.clone();
    let seed = mix_seed(settings.seed, opt.seed);
    let mut sampler = Sampler::new(train.len(), seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD5);
    let mut adam = Adam::new(opt.clone(), steps)?;
    let mut report = TrainReport::new("finetune", settings.seed);
    for step in 1..=steps {
        let batch = sampler.batch(opt.batch_size);
        let mut tape = Tape::new();
        let vars = weights.register(&mut tape, true);
        let mut terms = Vec::with_capacity(batch.len());
        for &i in &batch {
            let ex = &train[i];
            let mut drop = dropout(config, &mut drop_rng);
            let trace = encoder_forward(&mut tape, config, &vars, ex.input(), &mut drop)?;
            let label = ex.label.expect("checked above");
            terms.push(crate::distill::hard_label_loss(
                &mut tape,
                trace.logits,
                label,
                config.task_kind,
            )?);
        }
        let sum = crate::distill::sum_scalars(&mut tape, &terms)?;
        let loss = tape.scale(sum, 1.0 / terms.len() as f64);
        tape.backward(loss)?;
        report.loss.push(tape.item(loss));
        report.hard.push(tape.item(loss));
        weights.accumulate_grads(&tape, &vars);
        report.learning_rate.push(adam.step(weights.values_mut())?);
        weights.zero_grad();
        maybe_eval(&mut report, step, steps, settings, config, &weights)?;
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((weights, report))
}
