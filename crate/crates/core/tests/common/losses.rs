use super::{random_weights, tokens, uniform};
use pdistill::distill::{stage_loss, Alpha, DistillExample, Label, MappingVars, Objective};
use pdistill::model::{
    encoder_forward, trace_values, Dropout, EncoderInput, ForwardTrace, ModelConfig, TaskKind,
};
use pdistill::{Tape, Tensor, Var};

pub fn trace_on(tape: &mut Tape, attentions: &[Tensor], hiddens: &[Tensor], logits: &[f64]) -> ForwardTrace {
    let s = hiddens[0].shape()[0];
    ForwardTrace {
        embedding_output: tape.constant(Tensor::zeros(&[s, hiddens[0].shape()[1]])),
        attentions: attentions.iter().map(|a| tape.constant(a.clone())).collect(),
        hiddens: hiddens.iter().map(|h| tape.constant(h.clone())).collect(),
        logits: tape.constant(Tensor::new(&[1, logits.len()], logits.to_vec()).unwrap()),
    }
}

pub fn constant_maps(tape: &mut Tape, heads: &[Tensor], hidden: &[Tensor]) -> MappingVars {
    MappingVars {
        head_maps: heads.iter().map(|m| tape.constant(m.clone())).collect(),
        hidden_maps: hidden.iter().map(|n| tape.constant(n.clone())).collect(),
    }
}

/// Plain-loop latent loss for one student layer: the sum over teacher heads
/// of the per-head mean squared error, plus the hidden mean squared error.
pub fn latent_oracle(
    at: &Tensor,
    hs_t: &Tensor,
    as_: &Tensor,
    hs_s: &Tensor,
    m: &Tensor,
    n: &Tensor,
) -> (f64, f64) {
    let (ht, s) = (at.shape()[0], at.shape()[1]);
    let hs = as_.shape()[0];
    let mut att = 0.0;
    for a in 0..ht {
        let mut sq = 0.0;
        for i in 0..s {
            for j in 0..s {
                let mixed: f64 = (0..hs)
                    .map(|b| m.data()[a * hs + b] * as_.data()[(b * s + i) * s + j])
                    .sum();
                sq += (at.data()[(a * s + i) * s + j] - mixed).powi(2);
            }
        }
        att += sq / (s * s) as f64;
    }
    let (ds, dt) = (n.shape()[0], n.shape()[1]);
    let mut hid = 0.0;
    for i in 0..s {
        for c in 0..dt {
            let proj: f64 = (0..ds)
                .map(|r| hs_s.data()[i * ds + r] * n.data()[r * dt + c])
                .sum();
            hid += (hs_t.data()[i * dt + c] - proj).powi(2);
        }
    }
    (att, hid / (s * dt) as f64)
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn kl_oracle(p: &[f64], q: &[f64]) -> f64 {
    let (lp, lq) = (log_softmax(p), log_softmax(q));
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

pub fn self_distill_setup(seed: u64) -> (ModelConfig, pdistill::model::TransformerWeights, Vec<u32>) {
    let cfg = ModelConfig::new(2, 8, 16, 2, 12, 6);
    (
        cfg.clone(),
        random_weights(&cfg, 0.5, seed),
        tokens(5, 12, seed + 1),
    )
}

/// Teacher (L=2, d=8, h=2) and student (L=1, d=4, h=1), three labelled
/// sequences of different lengths.
pub struct Instance {
    pub teacher_cfg: ModelConfig,
    pub student_cfg: ModelConfig,
    pub teachers: [pdistill::model::TransformerWeights; 2],
    pub student: pdistill::model::TransformerWeights,
    pub inputs: Vec<(Vec<u32>, usize)>,
    pub m: Tensor,
    pub n: Tensor,
}

pub fn instance() -> Instance {
    let teacher_cfg = ModelConfig::new(2, 8, 16, 2, 11, 6);
    let student_cfg = ModelConfig::new(1, 4, 8, 1, 11, 6);
    Instance {
        teachers: [
            random_weights(&teacher_cfg, 0.5, 50),
            random_weights(&teacher_cfg, 0.5, 51),
        ],
        student: random_weights(&student_cfg, 0.5, 52),
        teacher_cfg,
        student_cfg,
        inputs: vec![
            (tokens(4, 11, 53), 1),
            (tokens(6, 11, 54), 0),
            (tokens(2, 11, 55), 1),
        ],
        m: uniform(&[2, 1], 1.0, 56),
        n: uniform(&[4, 8], 0.5, 57),
    }
}

pub struct Evaluated {
    pub total: f64,
    pub latent: f64,
    pub soft: Option<f64>,
    pub hard: Option<f64>,
}

pub fn run_stage_loss(
    inst: &Instance,
    teacher: usize,
    alpha: Alpha,
    labelled: bool,
) -> pdistill::Result<Evaluated> {
    let mut tape = Tape::new();
    let vars = inst.student.register(&mut tape, true);
    let maps = constant_maps(
        &mut tape,
        std::slice::from_ref(&inst.m),
        std::slice::from_ref(&inst.n),
    );
    let mut owned: Vec<(Vec<Var>, Vec<Var>, Var, ForwardTrace, Option<Label>)> = Vec::new();
    for (tok, y) in &inst.inputs {
        let seg = vec![0; tok.len()];
        let tv = trace_values(
            &inst.teacher_cfg,
            &inst.teachers[teacher],
            EncoderInput::new(tok, &seg),
        )?;
        let tt = tv.to_tape(&mut tape);
        let s = encoder_forward(
            &mut tape,
            &inst.student_cfg,
            &vars,
            EncoderInput::new(tok, &seg),
            &mut Dropout::off(),
        )?;
        let label = labelled.then_some(Label::Class(*y));
        owned.push((vec![tt.attentions[1]], vec![tt.hiddens[1]], tt.logits, s, label));
    }
    let batch: Vec<DistillExample> = owned
        .iter()
        .map(|(a, h, z, s, y)| DistillExample {
            teacher_attentions: a,
            teacher_hiddens: h,
            teacher_logits: *z,
            student: s,
            label: *y,
        })
        .collect();
    let loss = stage_loss(
        &mut tape,
        &batch,
        alpha,
        &maps,
        Objective::new(TaskKind::Classification),
    )?;
    Ok(Evaluated {
        total: tape.item(loss.total),
        latent: tape.item(loss.latent),
        soft: loss.soft.map(|v| tape.item(v)),
        hard: loss.hard.map(|v| tape.item(v)),
    })
}

/// Plain-loop expectation of latent, soft and hard batch means.
pub fn stage_oracle(inst: &Instance, teacher: usize) -> (f64, f64, f64) {
    let (mut lat, mut soft, mut hard) = (0.0, 0.0, 0.0);
    for (tok, y) in &inst.inputs {
        let seg = vec![0; tok.len()];
        let t = trace_values(
            &inst.teacher_cfg,
            &inst.teachers[teacher],
            EncoderInput::new(tok, &seg),
        )
        .unwrap();
        let s = trace_values(&inst.student_cfg, &inst.student, EncoderInput::new(tok, &seg)).unwrap();
        let (a, h) = latent_oracle(
            &t.attentions[1],
            &t.hiddens[1],
            &s.attentions[0],
            &s.hiddens[0],
            &inst.m,
            &inst.n,
        );
        lat += a + h;
        soft += kl_oracle(t.logits.data(), s.logits.data());
        hard -= log_softmax(s.logits.data())[*y];
    }
    let n = inst.inputs.len() as f64;
    (lat / n, soft / n, hard / n)
}
