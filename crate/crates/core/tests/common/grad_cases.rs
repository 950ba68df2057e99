use super::{bind_checkable, flatten_checkable, random_weights, tokens, uniform, weighted_sum};
use pdistill::distill::{stage_loss, Alpha, DistillExample, Label, LayerMap, MappingVars, Objective};
use pdistill::gradcheck::{finite_diff_check, finite_diff_check_many};
use pdistill::model::{
    encoder_forward, ffn_layer, mha_layer, trace_values, Dropout, EncoderInput, ModelConfig, TaskKind,
};
use pdistill::{Tape, Tensor, Var};

const STEP: f64 = 1e-5;

/// One finite-difference comparison: the largest relative error found and
/// the tolerance it must stay under.
#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl Case {
    pub fn passes(&self) -> bool {
        self.error < self.tolerance
    }
}

type Cases = Vec<Case>;

fn check1(
    out: &mut Cases,
    name: &str,
    at: Tensor,
    tol: f64,
    f: impl Fn(&mut Tape, Var) -> pdistill::Result<Var>,
) {
    let error = finite_diff_check(f, &at, STEP).unwrap();
    out.push(Case {
        name: name.to_string(),
        error,
        tolerance: tol,
    });
}

fn check_many(
    out: &mut Cases,
    name: &str,
    at: &[Tensor],
    tol: f64,
    f: impl Fn(&mut Tape, &[Var]) -> pdistill::Result<Var>,
) {
    let error = finite_diff_check_many(f, at, STEP).unwrap();
    out.push(Case {
        name: name.to_string(),
        error,
        tolerance: tol,
    });
}

pub fn matmul_3x4_by_4x2() -> Cases {
    let mut out = Vec::new();
    let b = uniform(&[4, 2], 1.0, 2);
    check1(
        &mut out,
        "matmul wrt a",
        uniform(&[3, 4], 1.0, 1),
        1e-6,
        |t, a| {
            let b = t.constant(b.clone());
            let y = t.matmul(a, b)?;
            Ok(t.sum(y))
        },
    );
    check_many(
        &mut out,
        "matmul both",
        &[uniform(&[3, 4], 1.0, 3), uniform(&[4, 2], 1.0, 4)],
        1e-6,
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, 5)
        },
    );
    out
}

pub fn matmul_transposed() -> Cases {
    let mut out = Vec::new();
    check_many(
        &mut out,
        "matmul_nt",
        &[uniform(&[3, 5], 1.0, 6), uniform(&[4, 5], 1.0, 7)],
        1e-6,
        |t, v| {
            let y = t.matmul_nt(v[0], v[1])?;
            weighted_sum(t, y, 8)
        },
    );
    out
}

pub fn elementwise_binary_ops() -> Cases {
    let mut out = Vec::new();
    let at = [uniform(&[2, 3], 1.0, 10), uniform(&[2, 3], 1.0, 11)];
    check_many(&mut out, "add", &at, 1e-6, |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 12)
    });
    check_many(&mut out, "sub", &at, 1e-6, |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted_sum(t, y, 13)
    });
    check_many(&mut out, "mul", &at, 1e-6, |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 14)
    });
    check_many(
        &mut out,
        "add_row",
        &[uniform(&[3, 4], 1.0, 15), uniform(&[4], 1.0, 16)],
        1e-6,
        |t, v| {
            let y = t.add_row(v[0], v[1])?;
            weighted_sum(t, y, 17)
        },
    );
    out
}

pub fn elementwise_unary_ops() -> Cases {
    let mut out = Vec::new();
    check1(&mut out, "scale", uniform(&[5], 1.0, 20), 1e-6, |t, x| {
        let y = t.scale(x, -2.5);
        weighted_sum(t, y, 21)
    });
    check1(&mut out, "gelu", uniform(&[3, 4], 3.0, 22), 1e-6, |t, x| {
        let y = t.gelu(x);
        weighted_sum(t, y, 23)
    });
    check1(&mut out, "tanh", uniform(&[3, 4], 2.0, 24), 1e-6, |t, x| {
        let y = t.tanh(x);
        weighted_sum(t, y, 25)
    });
    out
}

pub fn dropout_with_fixed_mask() -> Cases {
    let mut out = Vec::new();
    check1(&mut out, "dropout", uniform(&[4, 6], 1.0, 26), 1e-6, |t, x| {
        let mut r = super::rng(27);
        let y = t.dropout(x, 0.3, &mut r);
        weighted_sum(t, y, 28)
    });
    out
}

pub fn softmax_rows_gradient() -> Cases {
    let mut out = Vec::new();
    check1(&mut out, "softmax 2d", uniform(&[3, 5], 2.0, 30), 1e-6, |t, x| {
        let y = t.softmax_rows(x);
        weighted_sum(t, y, 31)
    });
    check1(
        &mut out,
        "softmax 3d",
        uniform(&[2, 3, 3], 2.0, 32),
        1e-6,
        |t, x| {
            let y = t.softmax_rows(x);
            weighted_sum(t, y, 33)
        },
    );
    out
}

pub fn layer_norm_random_2x8() -> Cases {
    let mut out = Vec::new();
    let at = [
        uniform(&[2, 8], 1.0, 40),
        uniform(&[8], 1.0, 41),
        uniform(&[8], 1.0, 42),
    ];
    check_many(&mut out, "layer_norm", &at, 1e-5, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-12)?;
        weighted_sum(t, y, 43)
    });
    out
}

pub fn reductions_and_losses() -> Cases {
    let mut out = Vec::new();
    check1(&mut out, "sum", uniform(&[2, 3], 1.0, 50), 1e-6, |t, x| {
        Ok(t.sum(x))
    });
    check1(&mut out, "mean", uniform(&[2, 3], 1.0, 51), 1e-6, |t, x| {
        let sq = t.mul(x, x)?;
        Ok(t.mean(sq))
    });
    check_many(
        &mut out,
        "mse",
        &[uniform(&[3, 4], 1.0, 52), uniform(&[3, 4], 1.0, 53)],
        1e-6,
        |t, v| t.mse(v[0], v[1]),
    );
    for temperature in [1.0, 2.0] {
        check_many(
            &mut out,
            &format!("kl_div T={temperature}"),
            &[uniform(&[3, 4], 2.0, 54), uniform(&[3, 4], 2.0, 55)],
            1e-5,
            |t, v| t.kl_div(v[0], v[1], temperature),
        );
    }
    check1(
        &mut out,
        "cross_entropy",
        uniform(&[3, 4], 2.0, 56),
        1e-5,
        |t, x| t.cross_entropy(x, &[0, 3, 1]),
    );
    out
}

pub fn indexing_and_reshaping() -> Cases {
    let mut out = Vec::new();
    check1(
        &mut out,
        "gather_rows",
        uniform(&[5, 3], 1.0, 60),
        1e-6,
        |t, x| {
            let y = t.gather_rows(x, &[4, 0, 4, 2])?;
            weighted_sum(t, y, 61)
        },
    );
    check1(&mut out, "slice_cols", uniform(&[3, 6], 1.0, 62), 1e-6, |t, x| {
        let y = t.slice_cols(x, 2, 3)?;
        weighted_sum(t, y, 63)
    });
    check_many(
        &mut out,
        "concat_cols",
        &[uniform(&[3, 2], 1.0, 64), uniform(&[3, 4], 1.0, 65)],
        1e-6,
        |t, v| {
            let y = t.concat_cols(v)?;
            weighted_sum(t, y, 66)
        },
    );
    check_many(
        &mut out,
        "stack",
        &[uniform(&[2, 3], 1.0, 67), uniform(&[2, 3], 1.0, 68)],
        1e-6,
        |t, v| {
            let y = t.stack(v)?;
            weighted_sum(t, y, 69)
        },
    );
    check1(&mut out, "reshape", uniform(&[2, 6], 1.0, 70), 1e-6, |t, x| {
        let y = t.reshape(x, &[3, 4])?;
        weighted_sum(t, y, 71)
    });
    out
}

fn small_config() -> ModelConfig {
    ModelConfig::new(2, 8, 16, 2, 11, 6)
}

pub fn mha_then_ffn_on_every_layer_parameter() -> Cases {
    let mut out = Vec::new();
    let cfg = small_config();
    let w = random_weights(&cfg, 0.5, 80);
    let params: Vec<Tensor> = w
        .named()
        .into_iter()
        .filter(|(n, _)| n.starts_with("layer.0."))
        .map(|(_, t)| t.clone())
        .collect();
    assert_eq!(params.len(), 16);
    let key_bias = params[3].clone();
    let h0 = uniform(&[3, 8], 1.0, 81);
    let mut params = params;
    params.remove(3);
    check_many(&mut out, "mha+ffn", &params, 1e-4, |t, v| {
        let mut it = v.iter().copied();
        let mut next = || it.next().unwrap();
        let layer = pdistill::model::LayerParams {
            query: next(),
            query_bias: next(),
            key: next(),
            key_bias: t.constant(key_bias.clone()),
            value: next(),
            value_bias: next(),
            output: next(),
            output_bias: next(),
            attn_ln_gain: next(),
            attn_ln_bias: next(),
            ffn_in: next(),
            ffn_in_bias: next(),
            ffn_out: next(),
            ffn_out_bias: next(),
            ffn_ln_gain: next(),
            ffn_ln_bias: next(),
        };
        let h = t.constant(h0.clone());
        let (a, h1) = mha_layer(t, &cfg, &layer, h, None, &mut Dropout::off())?;
        let h2 = ffn_layer(t, &cfg, &layer, h1, &mut Dropout::off())?;
        let la = weighted_sum(t, a, 82)?;
        let lh = weighted_sum(t, h2, 83)?;
        t.add(la, lh)
    });
    out
}

pub fn cross_entropy_through_encoder_on_every_weight() -> Cases {
    let mut out = Vec::new();
    let cfg = small_config();
    let w = random_weights(&cfg, 0.5, 90);
    let toks = tokens(3, cfg.vocab_size, 91);
    let segs = [0u32, 0, 1];
    check_many(&mut out, "encoder", &flatten_checkable(&w), 1e-4, |t, v| {
        let vars = bind_checkable(t, &w, v);
        let trace = encoder_forward(
            t,
            &cfg,
            &vars,
            EncoderInput::new(&toks, &segs),
            &mut Dropout::off(),
        )?;
        t.cross_entropy(trace.logits, &[1])
    });
    out
}

pub fn encoder_with_padding_mask() -> Cases {
    let mut out = Vec::new();
    let cfg = small_config();
    let w = random_weights(&cfg, 0.5, 95);
    let toks = [2u32, 7, 5, 3, 0];
    let segs = [0u32; 5];
    let valid = [true, true, true, true, false];
    check_many(
        &mut out,
        "encoder masked",
        &flatten_checkable(&w),
        1e-4,
        |t, v| {
            let vars = bind_checkable(t, &w, v);
            let input = EncoderInput::new(&toks, &segs).with_valid(&valid);
            let trace = encoder_forward(t, &cfg, &vars, input, &mut Dropout::off())?;
            let h = weighted_sum(t, trace.hiddens[1], 96)?;
            let ce = t.cross_entropy(trace.logits, &[0])?;
            t.add(h, ce)
        },
    );
    out
}

/// Teacher (L=2, d=8) and student (L=1, d=4) with the full stage loss at
/// alpha = 1 over a two-example batch; gradients wrt every student weight
/// and both alignment matrices.
pub fn full_stage_loss_student_and_maps() -> Cases {
    let mut out = Vec::new();
    let mut teacher_cfg = ModelConfig::new(2, 8, 16, 2, 11, 6);
    let mut student_cfg = ModelConfig::new(1, 4, 8, 1, 11, 6);
    teacher_cfg.num_labels = 3;
    student_cfg.num_labels = 3;
    let teacher = random_weights(&teacher_cfg, 0.5, 100);
    let student = random_weights(&student_cfg, 0.5, 101);
    let lm = LayerMap::new(2, 1).unwrap();
    let inputs = [
        (tokens(4, 11, 102), vec![0u32, 0, 1, 1], 2usize),
        (tokens(3, 11, 103), vec![0u32; 3], 0),
    ];
    let targets: Vec<_> = inputs
        .iter()
        .map(|(tok, seg, _)| trace_values(&teacher_cfg, &teacher, EncoderInput::new(tok, seg)).unwrap())
        .collect();

    let mut at = flatten_checkable(&student);
    let n_student = at.len();
    at.push(uniform(&[2, 1], 1.0, 104));
    at.push(uniform(&[4, 8], 0.5, 105));

    for alpha in [Alpha::Zero, Alpha::One] {
        check_many(
            &mut out,
            &format!("stage_loss alpha={}", alpha.value()),
            &at,
            1e-4,
            |t, v| {
                let vars = bind_checkable(t, &student, &v[..n_student]);
                let maps = MappingVars {
                    head_maps: vec![v[n_student]],
                    hidden_maps: vec![v[n_student + 1]],
                };
                let mut owned = Vec::new();
                for ((tok, seg, label), target) in inputs.iter().zip(&targets) {
                    let tt = target.to_tape(t);
                    let k = lm.teacher_layer(1)? - 1;
                    let s = encoder_forward(
                        t,
                        &student_cfg,
                        &vars,
                        EncoderInput::new(tok, seg),
                        &mut Dropout::off(),
                    )?;
                    owned.push((
                        vec![tt.attentions[k]],
                        vec![tt.hiddens[k]],
                        tt.logits,
                        s,
                        Label::Class(*label),
                    ));
                }
                let batch: Vec<DistillExample> = owned
                    .iter()
                    .map(|(a, h, z, s, y)| DistillExample {
                        teacher_attentions: a,
                        teacher_hiddens: h,
                        teacher_logits: *z,
                        student: s,
                        label: Some(*y),
                    })
                    .collect();
                let loss = stage_loss(t, &batch, alpha, &maps, Objective::new(TaskKind::Classification))?;
                Ok(loss.total)
            },
        );
    }
    out
}
