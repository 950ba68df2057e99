use pdistill::metrics::{accuracy, f1_binary, mcc, mean_std, pearson, Confusion};
use proptest::prelude::*;

/// Predictions and labels with the given confusion counts.
fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> (Vec<usize>, Vec<usize>) {
    let mut p = Vec::new();
    let mut l = Vec::new();
    for (n, pred, label) in [(tp, 1, 1), (tn, 0, 0), (fp, 1, 0), (fn_, 0, 1)] {
        p.extend(std::iter::repeat_n(pred, n));
        l.extend(std::iter::repeat_n(label, n));
    }
    (p, l)
}

#[test]
fn mcc_direct_formula() {
    let (p, l) = from_counts(3, 4, 1, 2);
    let expect = (3.0 * 4.0 - 1.0 * 2.0) / (4.0f64 * 5.0 * 5.0 * 6.0).sqrt();
    assert!((expect - 10.0 / 600f64.sqrt()).abs() < 1e-15);
    let got = mcc(&p, &l).unwrap();
    assert!((got - 0.4082).abs() < 1e-4, "{got}");
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn mcc_degenerate_and_perfect() {
    assert_eq!(mcc(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
    assert_eq!(mcc(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
    assert_eq!(mcc(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
    assert_eq!(mcc(&[1, 0, 0, 1], &[0, 1, 1, 0]).unwrap(), -1.0);
    assert!(mcc(&[0, 1], &[0]).is_err());
    assert!(mcc(&[2], &[0]).is_err());
}

#[test]
fn f1_from_precision_and_recall() {
    let (p, l) = from_counts(3, 0, 1, 2);
    let (precision, recall) = (0.75, 0.6);
    let expect = 2.0 * precision * recall / (precision + recall);
    let got = f1_binary(&p, &l).unwrap();
    assert!((got - 2.0 / 3.0).abs() < 1e-15);
    assert!((got - expect).abs() < 1e-12);
    assert_eq!(f1_binary(&[0, 0], &[0, 0]).unwrap(), 0.0);
}

#[test]
fn accuracy_and_pearson_trivial_cases() {
    assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 2, 2], &[0, 1, 1, 0]).unwrap(), 0.5);
    assert!(accuracy(&[], &[]).is_err());
    let x = [1.0, 2.5, -3.0, 4.0];
    assert_eq!(pearson(&x, &x).unwrap(), 1.0);
    let neg: Vec<f64> = x.iter().map(|v| -2.0 * v + 1.0).collect();
    assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!(pearson(&[1.0, 1.0], &[0.0, 1.0]).is_err());
}

#[test]
fn mean_std_of_identical_values() {
    assert_eq!(mean_std(&[0.7; 5]), (0.7, 0.0));
    assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

fn labels() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((0usize..2, 0usize..2), 1..60).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn metrics_stay_in_range((p, l) in labels()) {
        let a = accuracy(&p, &l).unwrap();
        let f = f1_binary(&p, &l).unwrap();
        let m = mcc(&p, &l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((-1.0..=1.0).contains(&m));
    }

    #[test]
    fn mcc_symmetric_under_class_swap((p, l) in labels()) {
        let flip = |v: &[usize]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
        let a = mcc(&p, &l).unwrap();
        let b = mcc(&flip(&p), &flip(&l)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn confusion_counts_add_up((p, l) in labels()) {
        let c = Confusion::from_predictions(&p, &l).unwrap();
        prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, p.len());
        let acc = (c.tp + c.tn) as f64 / p.len() as f64;
        prop_assert!((acc - accuracy(&p, &l).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn pearson_in_range(xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let back = pearson(&y, &x).unwrap();
            prop_assert!((r - back).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_of_identical_runs(v in -1.0f64..1.0, n in 1usize..8) {
        let (m, s) = mean_std(&vec![v; n]);
        prop_assert!((m - v).abs() < 1e-15);
        prop_assert!(s.abs() < 1e-15);
    }
}
