use super::mapping::{LayerMap, MappingVars};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, TaskKind};
use crate::tape::{Tape, Var};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Ground-truth target of a task example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    Score(f64),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "{c}"),
            Label::Score(v) => write!(f, "{v}"),
        }
    }
}

/// Weight of the soft- and hard-label terms in the stage loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Alpha {
    Zero,
    One,
}

impl Alpha {
    pub fn value(self) -> f64 {
        match self {
            Alpha::Zero => 0.0,
            Alpha::One => 1.0,
        }
    }
}

impl TryFrom<u8> for Alpha {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Alpha::Zero),
            1 => Ok(Alpha::One),
            other => Err(format!("alpha must be 0 or 1, got {other}")),
        }
    }
}

impl From<Alpha> for u8 {
    fn from(a: Alpha) -> u8 {
        a.value() as u8
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

/// The two halves of the latent loss and their sum.
#[derive(Clone, Copy, Debug)]
pub struct LatentLoss {
    pub attention: Var,
    pub hidden: Var,
    pub total: Var,
}

/// Latent distillation between full traces: student layer `l` is compared
/// with teacher layer `l * stride`.
pub fn latent_loss(
    tape: &mut Tape,
    teacher: &ForwardTrace,
    student: &ForwardTrace,
    maps: &MappingVars,
    layer_map: &LayerMap,
) -> Result<LatentLoss> {
    if teacher.attentions.len() != layer_map.teacher_layers()
        || student.attentions.len() != layer_map.student_layers()
    {
        return Err(Error::Config(format!(
            "traces have {}/{} layers, layer map expects {}/{}",
            teacher.attentions.len(),
            student.attentions.len(),
            layer_map.teacher_layers(),
            layer_map.student_layers()
        )));
    }
    let mut attentions = Vec::with_capacity(layer_map.student_layers());
    let mut hiddens = Vec::with_capacity(layer_map.student_layers());
    for l in 1..=layer_map.student_layers() {
        let k = layer_map.teacher_layer(l)?;
        attentions.push(teacher.attentions[k - 1]);
        hiddens.push(teacher.hiddens[k - 1]);
    }
    latent_loss_aligned(tape, &attentions, &hiddens, student, maps)
}

/// Latent loss against teacher targets already aligned to student layers:
/// `teacher_attentions[l]` and `teacher_hiddens[l]` belong to student layer
/// `l + 1`. The targets are detached.
pub fn latent_loss_aligned(
    tape: &mut Tape,
    teacher_attentions: &[Var],
    teacher_hiddens: &[Var],
    student: &ForwardTrace,
    maps: &MappingVars,
) -> Result<LatentLoss> {
    let layers = student.attentions.len();
    if teacher_attentions.len() != layers
        || teacher_hiddens.len() != layers
        || maps.head_maps.len() != layers
        || maps.hidden_maps.len() != layers
    {
        return Err(Error::Config(
            "teacher targets and maps must cover every student layer".into(),
        ));
    }
    if layers == 0 {
        return Err(Error::Config(
            "latent loss needs at least one student layer".into(),
        ));
    }
    let mut attention_terms = Vec::with_capacity(layers);
    let mut hidden_terms = Vec::with_capacity(layers);
    for l in 0..layers {
        // Teacher targets are fixed: no gradient may reach the teacher.
        let t_att = tape.detach(teacher_attentions[l]);
        let t_hid = tape.detach(teacher_hiddens[l]);
        let s_att = student.attentions[l];
        let (th, ts) = match (tape.shape(t_att), tape.shape(s_att)) {
            ([th, s1, s2], [sh, s3, s4]) if s1 == s3 && s2 == s4 => (*th, *sh),
            (a, b) => return Err(Error::shape("latent_loss attention", a, b)),
        };
        let s = tape.shape(s_att)[1];
        // Row a of M_l mixes the student heads into a stand-in for teacher head a.
        let s_flat = tape.reshape(s_att, &[ts, s * s])?;
        let mixed = tape.matmul(maps.head_maps[l], s_flat)?;
        let t_flat = tape.reshape(t_att, &[th, s * s])?;
        // Sum over teacher heads of the per-head mean squared error.
        let per_head_mean = tape.mse(t_flat, mixed)?;
        attention_terms.push(tape.scale(per_head_mean, th as f64));

        let projected = tape.matmul(student.hiddens[l], maps.hidden_maps[l])?;
        hidden_terms.push(tape.mse(t_hid, projected)?);
    }
    let attention = sum_scalars(tape, &attention_terms)?;
    let hidden = sum_scalars(tape, &hidden_terms)?;
    let total = tape.add(attention, hidden)?;
    Ok(LatentLoss {
        attention,
        hidden,
        total,
    })
}

/// Loss against the teacher's logits, with the teacher side detached.
/// Classification uses `KL(teacher ‖ student)` at `temperature`; regression
/// uses mean squared error.
pub fn soft_label_loss(
    tape: &mut Tape,
    teacher_logits: Var,
    student_logits: Var,
    kind: TaskKind,
    temperature: f64,
) -> Result<Var> {
    if tape.shape(teacher_logits) != tape.shape(student_logits) {
        return Err(Error::shape(
            "soft_label_loss",
            tape.shape(teacher_logits),
            tape.shape(student_logits),
        ));
    }
    let target = tape.detach(teacher_logits);
    match kind {
        TaskKind::Classification => tape.kl_div(target, student_logits, temperature),
        TaskKind::Regression => tape.mse(target, student_logits),
    }
}

/// Loss against the ground-truth label: cross entropy for classification,
/// mean squared error for regression.
pub fn hard_label_loss(tape: &mut Tape, student_logits: Var, label: Label, kind: TaskKind) -> Result<Var> {
    match (kind, label) {
        (TaskKind::Classification, Label::Class(c)) => tape.cross_entropy(student_logits, &[c]),
        (TaskKind::Regression, Label::Score(y)) => {
            let shape = tape.shape(student_logits).to_vec();
            let target = tape.constant(crate::Tensor::full(&shape, y));
            tape.mse(target, student_logits)
        }
        (kind, label) => Err(Error::InvalidArgument(format!(
            "label {label:?} is not valid for a {kind:?} task"
        ))),
    }
}

/// One example of a distillation batch: both traces from the same input,
/// and the label when the data carries one.
#[derive(Clone, Copy, Debug)]
pub struct DistillExample<'a> {
    pub teacher_attentions: &'a [Var],
    pub teacher_hiddens: &'a [Var],
    pub teacher_logits: Var,
    pub student: &'a ForwardTrace,
    pub label: Option<Label>,
}

/// Batch-mean stage loss and its components.
#[derive(Clone, Copy, Debug)]
pub struct StageLoss {
    pub total: Var,
    pub latent: Var,
    pub soft: Option<Var>,
    pub hard: Option<Var>,
}

/// Soft-label settings shared by a stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub kind: TaskKind,
    pub temperature: f64,
}

impl Objective {
    pub fn new(kind: TaskKind) -> Self {
        Objective {
            kind,
            temperature: 1.0,
        }
    }
}

/// `mean(latent) + alpha * (mean(soft) + mean(hard))` over the batch. With
/// `alpha == 0` the total is the latent mean itself.
pub fn stage_loss(
    tape: &mut Tape,
    batch: &[DistillExample<'_>],
    alpha: Alpha,
    maps: &MappingVars,
    objective: Objective,
) -> Result<StageLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty distillation batch".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut latents = Vec::with_capacity(batch.len());
    let mut softs = Vec::new();
    let mut hards = Vec::new();
    for ex in batch {
        let lat = latent_loss_aligned(tape, ex.teacher_attentions, ex.teacher_hiddens, ex.student, maps)?;
        latents.push(lat.total);
        if alpha == Alpha::One {
            let label = ex
                .label
                .ok_or_else(|| Error::InvalidArgument("alpha = 1 needs labelled examples".into()))?;
            softs.push(soft_label_loss(
                tape,
                ex.teacher_logits,
                ex.student.logits,
                objective.kind,
                objective.temperature,
            )?);
            hards.push(hard_label_loss(tape, ex.student.logits, label, objective.kind)?);
        }
    }
    let latent = mean_scalars(tape, &latents, inv)?;
    if alpha == Alpha::Zero {
        return Ok(StageLoss {
            total: latent,
            latent,
            soft: None,
            hard: None,
        });
    }
    let soft = mean_scalars(tape, &softs, inv)?;
    let hard = mean_scalars(tape, &hards, inv)?;
    let labelled = tape.add(soft, hard)?;
    let total = tape.add(latent, labelled)?;
    Ok(StageLoss {
        total,
        latent,
        soft: Some(soft),
        hard: Some(hard),
    })
}

pub(crate) fn sum_scalars(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("sum of no terms".into()))?;
    rest.iter().try_fold(first, |acc, &t| tape.add(acc, t))
}

fn mean_scalars(tape: &mut Tape, terms: &[Var], inv: f64) -> Result<Var> {
    let s = sum_scalars(tape, terms)?;
    Ok(if terms.len() == 1 { s } else { tape.scale(s, inv) })
}
