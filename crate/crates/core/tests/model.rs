mod common;

use common::{random_weights, tokens};
use pdistill::model::{
    embed, encoder_forward, ffn_layer, flop_estimate, mha_layer, mlm_forward, param_count, parameter_shapes,
    per_layer_params, trace_values, Dropout, EncoderInput, ModelConfig, TransformerWeights,
};
use pdistill::{Error, Tape, Tensor};

fn zeros_like(cfg: &ModelConfig) -> TransformerWeights {
    TransformerWeights::zeros(cfg)
}

fn set(t: &mut Tensor, values: &[f64]) {
    assert_eq!(t.len(), values.len());
    t.data_mut().copy_from_slice(values);
}

/// Reference layer norm over one row, eps 0.
fn ln_row(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / var.sqrt()).collect()
}

fn gelu_ref(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn hand_cfg(d: usize, d_ff: usize, heads: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(1, d, d_ff, heads, 4, 4);
    cfg.layer_norm_eps = 1e-300;
    cfg
}

#[test]
fn single_position_attention_is_one() {
    let cfg = ModelConfig::new(2, 8, 16, 4, 10, 4);
    let w = random_weights(&cfg, 1.0, 1);
    let tr = trace_values(&cfg, &w, EncoderInput::new(&[3], &[0])).unwrap();
    for a in &tr.attentions {
        assert_eq!(a.shape(), &[4, 1, 1]);
        assert!(a.data().iter().all(|&v| v == 1.0));
    }
}

#[test]
fn zero_query_gives_uniform_attention() {
    let cfg = ModelConfig::new(1, 8, 16, 2, 10, 5);
    let mut w = random_weights(&cfg, 1.0, 2);
    w.layers[0].query.data_mut().fill(0.0);
    w.layers[0].query_bias.data_mut().fill(0.0);
    let tr = trace_values(&cfg, &w, EncoderInput::new(&[1, 2, 3, 4], &[0; 4])).unwrap();
    for v in tr.attentions[0].data() {
        assert!((v - 0.25).abs() < 1e-15, "{v}");
    }
    let mut w = random_weights(&cfg, 1.0, 3);
    w.layers[0].key.data_mut().fill(0.0);
    w.layers[0].key_bias.data_mut().fill(0.0);
    let tr = trace_values(&cfg, &w, EncoderInput::new(&[1, 2, 3], &[0; 3])).unwrap();
    for v in tr.attentions[0].data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn two_position_attention_by_hand() {
    let cfg = hand_cfg(2, 2, 1);
    let mut w = zeros_like(&cfg);
    let l = &mut w.layers[0];
    set(&mut l.query, &[1.0, 0.5, -0.5, 2.0]);
    set(&mut l.key, &[0.3, -1.0, 1.5, 0.2]);
    set(&mut l.value, &[1.0, 0.0, 0.0, 1.0]);
    set(&mut l.output, &[1.0, 0.0, 0.0, 1.0]);
    set(&mut l.attn_ln_gain, &[1.0, 1.0]);
    let h = [[1.0, 2.0], [-1.0, 0.5]];

    // q_i = h_i Q, k_j = h_j K (row vectors), scores q_i . k_j / sqrt(2)
    let mul = |x: [f64; 2], m: [f64; 4]| [x[0] * m[0] + x[1] * m[2], x[0] * m[1] + x[1] * m[3]];
    let qm = [1.0, 0.5, -0.5, 2.0];
    let km = [0.3, -1.0, 1.5, 0.2];
    let mut expected = [[0.0; 2]; 2];
    for i in 0..2 {
        let q = mul(h[i], qm);
        let s: Vec<f64> = (0..2)
            .map(|j| {
                let k = mul(h[j], km);
                (q[0] * k[0] + q[1] * k[1]) / 2f64.sqrt()
            })
            .collect();
        let z = s[0].exp() + s[1].exp();
        expected[i] = [s[0].exp() / z, s[1].exp() / z];
    }

    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let hv = tape.constant(Tensor::from_rows(&[&h[0], &h[1]]).unwrap());
    let (a, h_out) = mha_layer(&mut tape, &cfg, &vars.layers[0], hv, None, &mut Dropout::off()).unwrap();
    let got = tape.value(a).data();
    for i in 0..2 {
        for j in 0..2 {
            assert!((got[i * 2 + j] - expected[i][j]).abs() < 1e-10);
        }
    }
    // With identity V and O the output row is LN(h_i + sum_j a_ij h_j).
    let out = tape.value(h_out);
    for i in 0..2 {
        let mixed: Vec<f64> = (0..2)
            .map(|c| h[i][c] + expected[i][0] * h[0][c] + expected[i][1] * h[1][c])
            .collect();
        let want = ln_row(&mixed);
        for c in 0..2 {
            assert!((out.row(i)[c] - want[c]).abs() < 1e-10);
        }
    }
}

#[test]
fn feed_forward_by_hand() {
    let cfg = hand_cfg(2, 2, 1);
    let mut w = zeros_like(&cfg);
    let l = &mut w.layers[0];
    let w1 = [0.5, -1.0, 2.0, 0.25];
    let b1 = [0.1, -0.2];
    let w2 = [1.5, 0.3, -0.7, 0.9];
    let b2 = [0.05, 0.4];
    set(&mut l.ffn_in, &w1);
    set(&mut l.ffn_in_bias, &b1);
    set(&mut l.ffn_out, &w2);
    set(&mut l.ffn_out_bias, &b2);
    set(&mut l.ffn_ln_gain, &[1.0, 1.0]);
    let h = [[0.7, -1.3], [2.0, 0.4]];

    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let hv = tape.constant(Tensor::from_rows(&[&h[0], &h[1]]).unwrap());
    let out = ffn_layer(&mut tape, &cfg, &vars.layers[0], hv, &mut Dropout::off()).unwrap();
    let out = tape.value(out);
    for i in 0..2 {
        let x = h[i];
        let inner = [
            gelu_ref(x[0] * w1[0] + x[1] * w1[2] + b1[0]),
            gelu_ref(x[0] * w1[1] + x[1] * w1[3] + b1[1]),
        ];
        let ffn = [
            inner[0] * w2[0] + inner[1] * w2[2] + b2[0],
            inner[0] * w2[1] + inner[1] * w2[3] + b2[1],
        ];
        let want = ln_row(&[x[0] + ffn[0], x[1] + ffn[1]]);
        for c in 0..2 {
            assert!((out.row(i)[c] - want[c]).abs() < 1e-10, "{i},{c}");
        }
    }
}

#[test]
fn zero_feed_forward_is_layer_norm_of_input() {
    let cfg = ModelConfig::new(1, 4, 8, 2, 5, 3);
    let mut w = zeros_like(&cfg);
    w.layers[0].ffn_ln_gain.data_mut().fill(1.0);
    let rows = [[0.3, -1.0, 2.0, 0.1], [1.0, 1.5, -0.5, 0.0]];
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let hv = tape.constant(Tensor::from_rows(&[&rows[0], &rows[1]]).unwrap());
    let out = ffn_layer(&mut tape, &cfg, &vars.layers[0], hv, &mut Dropout::off()).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let want = ln_row(r);
        for c in 0..4 {
            assert!((tape.value(out).row(i)[c] - want[c]).abs() < 1e-9);
        }
    }
}

#[test]
fn one_layer_trace_is_mha_then_ffn_of_embedding() {
    let cfg = ModelConfig::new(1, 8, 16, 2, 12, 6);
    let w = random_weights(&cfg, 0.5, 4);
    let toks = [2u32, 5, 7, 3];
    let segs = [0u32, 0, 1, 1];
    let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &segs)).unwrap();

    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let h0 = embed(&mut tape, &cfg, &vars, &toks, &segs).unwrap();
    let (a, h1) = mha_layer(&mut tape, &cfg, &vars.layers[0], h0, None, &mut Dropout::off()).unwrap();
    let h2 = ffn_layer(&mut tape, &cfg, &vars.layers[0], h1, &mut Dropout::off()).unwrap();
    assert_eq!(tape.value(h0), &tr.embedding_output);
    assert_eq!(tape.value(a), &tr.attentions[0]);
    assert_eq!(tape.value(h2), &tr.hiddens[0]);
}

#[test]
fn trace_shapes_follow_config() {
    for (l, d, h, s) in [(1, 4, 1, 1), (2, 8, 2, 5), (3, 12, 3, 7), (4, 16, 4, 3)] {
        let mut cfg = ModelConfig::new(l, d, 2 * d, h, 9, 8);
        cfg.num_labels = 3;
        let w = random_weights(&cfg, 0.3, l as u64);
        let toks = tokens(s, 9, 5);
        let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &vec![0; s])).unwrap();
        assert_eq!(tr.attentions.len(), l);
        assert_eq!(tr.hiddens.len(), l);
        assert!(tr.attentions.iter().all(|a| a.shape() == [h, s, s]));
        assert!(tr.hiddens.iter().all(|x| x.shape() == [s, d]));
        assert_eq!(tr.embedding_output.shape(), &[s, d]);
        assert_eq!(tr.logits.shape(), &[1, 3]);
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::new(2, 8, 16, 2, 10, 6);
    let w = random_weights(&cfg, 0.5, 6);
    let toks = tokens(6, 10, 7);
    let a = trace_values(&cfg, &w, EncoderInput::new(&toks, &[0; 6])).unwrap();
    let b = trace_values(&cfg, &w, EncoderInput::new(&toks, &[0; 6])).unwrap();
    assert_eq!(a, b);
}

#[test]
fn padded_positions_receive_no_attention() {
    let cfg = ModelConfig::new(2, 8, 16, 2, 10, 6);
    let w = random_weights(&cfg, 1.0, 8);
    let toks = [2u32, 6, 7, 3, 0, 0];
    let valid = [true, true, true, true, false, false];
    let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &[0; 6]).with_valid(&valid)).unwrap();
    for a in &tr.attentions {
        for row in a.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[4] < 1e-300 && row[5] < 1e-300);
        }
    }
    // Real positions are unaffected by what sits in the padding.
    let toks2 = [2u32, 6, 7, 3, 9, 1];
    let tr2 = trace_values(&cfg, &w, EncoderInput::new(&toks2, &[0; 6]).with_valid(&valid)).unwrap();
    for (x, y) in tr.hiddens[1].data()[..4 * 8]
        .iter()
        .zip(&tr2.hiddens[1].data()[..4 * 8])
    {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(tr.logits.max_abs_diff(&tr2.logits) < 1e-12);
}

#[test]
fn embed_zero_tables_give_layer_norm_bias() {
    let cfg = ModelConfig::new(1, 4, 8, 2, 5, 3);
    let mut w = zeros_like(&cfg);
    set(&mut w.embedding_ln_bias, &[0.1, 0.2, 0.3, 0.4]);
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let h0 = embed(&mut tape, &cfg, &vars, &[2], &[0]).unwrap();
    assert_eq!(tape.value(h0).data(), &[0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn embed_is_position_dependent() {
    let cfg = ModelConfig::new(1, 8, 16, 2, 10, 4);
    let w = random_weights(&cfg, 1.0, 9);
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let ab = embed(&mut tape, &cfg, &vars, &[3, 4], &[0, 0]).unwrap();
    let ba = embed(&mut tape, &cfg, &vars, &[4, 3], &[0, 0]).unwrap();
    let (ab, ba) = (tape.value(ab).clone(), tape.value(ba).clone());
    assert_ne!(ab.row(0), ba.row(1));
    // Without position embeddings, swapping tokens swaps rows exactly.
    let mut w = w;
    w.position_embeddings.data_mut().fill(0.0);
    let vars = w.register(&mut tape, false);
    let ab = embed(&mut tape, &cfg, &vars, &[3, 4], &[0, 0]).unwrap();
    let ba = embed(&mut tape, &cfg, &vars, &[4, 3], &[0, 0]).unwrap();
    assert_eq!(tape.value(ab).row(0), tape.value(ba).row(1));
    assert_eq!(tape.value(ab).row(1), tape.value(ba).row(0));
}

/// Sylvester Hadamard matrix of order 8.
fn hadamard8() -> Vec<Vec<f64>> {
    let mut h = vec![vec![1.0]];
    while h.len() < 8 {
        let n = h.len();
        let mut next = vec![vec![0.0; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = h[i][j];
                next[i][j + n] = h[i][j];
                next[i + n][j] = h[i][j];
                next[i + n][j + n] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

#[test]
fn embed_round_trip_with_orthogonal_tokens() {
    // Rows 1..=6 of a Hadamard matrix are orthogonal and zero-mean, so the
    // embedding layer norm only rescales them by sqrt(d), and the
    // pseudo-inverse of the (orthonormal) table is its transpose.
    let d = 8;
    let vocab = 6;
    let cfg = ModelConfig::new(1, d, 16, 2, vocab, 6);
    let mut w = zeros_like(&cfg);
    w.embedding_ln_gain.data_mut().fill(1.0);
    let h = hadamard8();
    let table: Vec<f64> = (1..=vocab)
        .flat_map(|r| h[r].iter().map(|v| v / (d as f64).sqrt()).collect::<Vec<_>>())
        .collect();
    set(&mut w.token_embeddings, &table);
    let e = Tensor::new(&[vocab, d], table).unwrap();
    for i in 0..vocab {
        for j in 0..vocab {
            let dot: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| a * b).sum();
            assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
    let toks = [4u32, 0, 5, 2, 2, 1];
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let h0 = embed(&mut tape, &cfg, &vars, &toks, &[0; 6]).unwrap();
    let h0 = tape.value(h0);
    for (p, &t) in toks.iter().enumerate() {
        let coords: Vec<f64> = (0..vocab)
            .map(|j| h0.row(p).iter().zip(e.row(j)).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
            .collect();
        for (j, c) in coords.iter().enumerate() {
            let want = if j == t as usize { 1.0 } else { 0.0 };
            assert!((c - want).abs() < 1e-9, "pos {p} coord {j}: {c}");
        }
    }
}

#[test]
fn embed_rejects_bad_inputs() {
    let cfg = ModelConfig::new(1, 4, 8, 2, 5, 3);
    let w = zeros_like(&cfg);
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    assert!(matches!(
        embed(&mut tape, &cfg, &vars, &[5], &[0]),
        Err(Error::TokenOutOfRange { id: 5, vocab: 5 })
    ));
    assert!(matches!(
        embed(&mut tape, &cfg, &vars, &[1, 1, 1, 1], &[0; 4]),
        Err(Error::SequenceTooLong { len: 4, max: 3 })
    ));
    assert!(embed(&mut tape, &cfg, &vars, &[1], &[2]).is_err());
    assert!(embed(&mut tape, &cfg, &vars, &[1, 2], &[0]).is_err());
}

#[test]
fn mlm_head_by_hand() {
    // vocab 2, d 2: the decoder is tied to the token embeddings, so the
    // logits are H_L[p] . E^T + b.
    let mut cfg = ModelConfig::new(1, 2, 2, 1, 2, 3);
    cfg.layer_norm_eps = 1e-300;
    let w = random_weights(&cfg, 0.8, 10);
    let toks = [1u32, 0, 1];
    let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &[0; 3])).unwrap();
    let last = &tr.hiddens[0];

    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let logits = mlm_forward(
        &mut tape,
        &cfg,
        &vars,
        EncoderInput::new(&toks, &[0; 3]),
        &[2, 0],
        &mut Dropout::off(),
    )
    .unwrap()
    .unwrap();
    let got = tape.value(logits);
    assert_eq!(got.shape(), &[2, 2]);
    for (r, &p) in [2usize, 0].iter().enumerate() {
        for v in 0..2 {
            let want = last.row(p)[0] * w.token_embeddings.row(v)[0]
                + last.row(p)[1] * w.token_embeddings.row(v)[1]
                + w.mlm_bias.data()[v];
            assert!((got.row(r)[v] - want).abs() < 1e-12);
        }
    }
    assert!(mlm_forward(
        &mut tape,
        &cfg,
        &vars,
        EncoderInput::new(&toks, &[0; 3]),
        &[],
        &mut Dropout::off()
    )
    .unwrap()
    .is_none());
    assert!(mlm_forward(
        &mut tape,
        &cfg,
        &vars,
        EncoderInput::new(&toks, &[0; 3]),
        &[3],
        &mut Dropout::off()
    )
    .is_err());
}

#[test]
fn encoder_forward_reports_errors() {
    let cfg = ModelConfig::new(1, 4, 8, 2, 5, 3);
    let w = zeros_like(&cfg);
    let mut tape = Tape::new();
    let vars = w.register(&mut tape, false);
    let bad_valid = [true];
    let input = EncoderInput::new(&[1, 2], &[0, 0]).with_valid(&bad_valid);
    assert!(encoder_forward(&mut tape, &cfg, &vars, input, &mut Dropout::off()).is_err());
}

/// Independent count: sum the sizes of every declared tensor, minus the
/// task and masked-token heads.
fn counted_from_shapes(cfg: &ModelConfig) -> u64 {
    let mut total = 0u64;
    parameter_shapes(cfg).map(|name, shape| {
        let heads = name.starts_with("classifier") || name.starts_with("mlm");
        if !heads {
            total += shape.iter().product::<usize>() as u64;
        }
    });
    total
}

#[test]
fn parameter_counts_match_reported_sizes() {
    let base = param_count(&ModelConfig::bert_base()) as f64;
    let tiny = param_count(&ModelConfig::tiny_student()) as f64;
    assert!((base / 109e6 - 1.0).abs() < 0.02, "{base}");
    assert!((tiny / 14.5e6 - 1.0).abs() < 0.02, "{tiny}");
    assert_eq!(
        param_count(&ModelConfig::bert_base()),
        counted_from_shapes(&ModelConfig::bert_base())
    );
    assert_eq!(
        param_count(&ModelConfig::tiny_student()),
        counted_from_shapes(&ModelConfig::tiny_student())
    );
}

#[test]
fn parameter_count_matches_allocated_weights() {
    let cfg = ModelConfig::new(3, 12, 20, 3, 17, 9);
    let w = random_weights(&cfg, 0.1, 11);
    let heads = w.classifier.len() + w.classifier_bias.len() + w.mlm_bias.len();
    assert_eq!(param_count(&cfg), (w.num_parameters() - heads) as u64);
}

#[test]
fn zero_layers_count_embeddings_and_pooler_only() {
    let cfg = ModelConfig::new(0, 16, 32, 2, 40, 10);
    let emb = (40 + 10 + 2) * 16 + 2 * 16;
    let pooler = 16 * 16 + 16;
    assert_eq!(param_count(&cfg), (emb + pooler) as u64);
}

#[test]
fn one_layer_flops_match_closed_form() {
    let cfg = ModelConfig::new(1, 16, 64, 4, 30, 32);
    let s = 10u64;
    let (d, f) = (16u64, 64u64);
    let est = flop_estimate(&cfg, 10);
    let per_layer = 4 * s * d * d + 2 * s * s * d + 2 * s * d * f;
    assert_eq!(est.total() - est.head, per_layer);
    assert_eq!(est.head, d * d + d * 2);
    assert_eq!(
        per_layer_params(&cfg),
        4 * (d * d + d) + 2 * d * f + f + d + 4 * d
    );
}
