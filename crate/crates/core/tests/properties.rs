mod common;

use pdistill::curriculum::{
    validate_schedule, DataKind, OptimizerConfig, Schedule, StageSpec, TeacherKind, Warmup,
};
use pdistill::distill::{latent_loss, layer_map, Alpha, LayerMap, MappingParams};
use pdistill::model::{trace_values, EncoderInput, ModelConfig};
use pdistill::{Tape, Tensor};
use proptest::prelude::*;

fn model_cfg() -> impl Strategy<Value = ModelConfig> {
    (1usize..3, 1usize..3, 1usize..4).prop_map(|(l, h, w)| ModelConfig::new(l, 4 * h * w, 8 * h, h, 12, 12))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_sum_to_one_with_padding(
        cfg in model_cfg(),
        len in 1usize..12,
        pad in 0usize..6,
        seed in any::<u64>(),
    ) {
        let width = (len + pad).min(12);
        let w = common::random_weights(&cfg, 1.0, seed);
        let toks = common::tokens(width, 12, seed ^ 1);
        let valid: Vec<bool> = (0..width).map(|i| i < len).collect();
        let segs = vec![0; width];
        let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &segs).with_valid(&valid)).unwrap();
        prop_assert_eq!(tr.attentions.len(), cfg.num_layers);
        for a in &tr.attentions {
            prop_assert_eq!(a.shape(), &[cfg.num_heads, width, width][..]);
            for (r, row) in a.data().chunks(width).enumerate() {
                let i = r % width;
                if i < len {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(row[len..].iter().all(|&p| p == 0.0));
                }
            }
        }
        for h in &tr.hiddens {
            prop_assert_eq!(h.shape(), &[width, cfg.hidden_size][..]);
            prop_assert!(h.is_finite());
        }
        let again = trace_values(&cfg, &w, EncoderInput::new(&toks, &segs).with_valid(&valid)).unwrap();
        prop_assert_eq!(again, tr);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_for_equal_distributions(
        p in prop::collection::vec(-4.0f64..4.0, 2..6),
        delta in prop::collection::vec(-2.0f64..2.0, 6),
        t in 0.5f64..4.0,
    ) {
        let n = p.len();
        let q: Vec<f64> = p.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(&[1, n], p.clone()).unwrap());
        let qv = tape.constant(Tensor::new(&[1, n], q.clone()).unwrap());
        let kl = tape.kl_div(pv, qv, t).unwrap();
        let v = tape.item(kl);
        prop_assert!(v >= -1e-15);
        let self_kl = tape.kl_div(pv, pv, t).unwrap();
        prop_assert_eq!(tape.item(self_kl), 0.0);
        // A shift of every logit leaves the distribution unchanged.
        let d0 = delta[0];
        let spread = delta[..n].iter().fold(0.0f64, |m, d| m.max((d - d0).abs()));
        if spread > 1e-3 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn mse_is_symmetric_and_nonnegative(
        xy in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        let n = x.len();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(&[n], x.clone()).unwrap());
        let b = tape.constant(Tensor::new(&[n], y.clone()).unwrap());
        let ab = tape.mse(a, b).unwrap();
        let ba = tape.mse(b, a).unwrap();
        let oracle = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n as f64;
        prop_assert_eq!(tape.item(ab), tape.item(ba));
        prop_assert!((tape.item(ab) - oracle).abs() < 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn self_distillation_latent_loss_is_zero(cfg in model_cfg(), len in 1usize..8, seed in any::<u64>()) {
        let w = common::random_weights(&cfg, 0.7, seed);
        let toks = common::tokens(len, 12, seed);
        let tr = trace_values(&cfg, &w, EncoderInput::new(&toks, &vec![0; len])).unwrap();
        let mut tape = Tape::new();
        let t = tr.to_tape(&mut tape);
        let s = tr.to_tape(&mut tape);
        let maps = MappingParams::new(&cfg, &cfg, true).register(&mut tape);
        let map = LayerMap::new(cfg.num_layers, cfg.num_layers).unwrap();
        let loss = latent_loss(&mut tape, &t, &s, &maps, &map).unwrap();
        prop_assert_eq!(tape.item(loss.total), 0.0);
    }

    #[test]
    fn layer_map_is_strictly_increasing_and_ends_at_the_top(m in 1usize..7, c in 1usize..5) {
        let n = m * c;
        let layers: Vec<usize> = (1..=m).map(|l| layer_map(l, n, m).unwrap()).collect();
        prop_assert!(layers.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(*layers.last().unwrap(), n);
        prop_assert!(layer_map(0, n, m).is_err());
        prop_assert!(layer_map(m + 1, n, m).is_err());
    }

    #[test]
    fn schedule_validity_matches_pairwise_rule(
        kinds in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 1..6),
    ) {
        let stages: Vec<StageSpec> = kinds
            .iter()
            .enumerate()
            .map(|(i, &(t, d, a))| {
                StageSpec::new(
                    &format!("s{i}"),
                    if t { TeacherKind::Finetuned } else { TeacherKind::Pretrained },
                    if d { DataKind::Task } else { DataKind::General },
                    if a { Alpha::One } else { Alpha::Zero },
                    1,
                    OptimizerConfig::new(1e-3, 1, Warmup::Steps(0)),
                )
            })
            .collect();
        let stage_ok = kinds.iter().all(|&(_, d, a)| d || !a);
        let transitions_ok = kinds.windows(2).all(|w| {
            (w[0].0 != w[1].0) as u8 + (w[0].1 != w[1].1) as u8 + (w[0].2 != w[1].2) as u8 == 1
        });
        let report = validate_schedule(&Schedule::new(stages));
        prop_assert_eq!(report.is_ok(), stage_ok && transitions_ok);
    }
}
