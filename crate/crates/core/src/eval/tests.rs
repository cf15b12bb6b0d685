use super::*;
use crate::modality::Modality;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(EvalError::Metric(_))));
    assert!(auroc(&[0.1], &[1, 0]).is_err());
}

#[test]
fn auroc_matches_pairwise_count_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let n = rng.random_range(2..60);
        let coarse = case % 2 == 0;
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> =
            (0..n).map(|_| if coarse { rng.random_range(0..5) as f64 / 4.0 } else { rng.random_range(0.0..1.0) }).collect();
        assert!((auroc(&scores, &labels).unwrap() - brute(&scores, &labels)).abs() < 1e-12, "case {case}");
    }
}

#[test]
fn f1_examples() {
    assert_eq!(f1(&[0.9, 0.1, 0.7], &[1, 0, 1], 0.5), 1.0);
    let c = Confusion { tp: 2, fp: 2, fn_: 0, tn: 5 };
    assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(f1(&[0.1, 0.2, 0.3], &[1, 1, 0], 0.5), 0.0);
    assert_eq!(f1(&[0.5], &[1], 0.5), 1.0);
    assert_eq!(f1(&[0.6, 0.4], &[1, 0], 0.7), 0.0);
}

#[test]
fn f1_matches_hand_built_confusions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let (tp, fp, fn_, tn) = (rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..6));
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (count, s, y) in [(tp, 0.9, 1), (fp, 0.8, 0), (fn_, 0.2, 1), (tn, 0.1, 0)] {
            scores.extend(std::iter::repeat_n(s, count));
            labels.extend(std::iter::repeat_n(y, count));
        }
        let expected = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        assert!((f1(&scores, &labels, 0.5) - expected).abs() < 1e-12);
        assert_eq!(Confusion::at(&scores, &labels, 0.5), Confusion { tp, fp, fn_, tn });
    }
}

#[test]
fn mean_std_sample_convention() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps(
        raw in prop::collection::vec((-3.0f64..3.0, 0u8..2), 2..40),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let base = auroc(&s, &labels).unwrap();
        let ex: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let af: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        prop_assert!((auroc(&ex, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&af, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn negated_scores_complement(labels in prop::collection::vec(0u8..2, 2..40), seed in 0u64..1000) {
        let mut labels = labels;
        labels[0] = 0;
        labels[1] = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // continuous draws: ties have probability zero
        let s: Vec<f64> = labels.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &labels).unwrap() + auroc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn scenario_round_trips() {
    for s in [
        "clean",
        "missing:ratio=0.25",
        "noisy:snr=20",
        "noisy:snr=10,chance=0.5",
        "both:ratio=0.3,snr=20",
        "ablate:modalities=EOG+EEG",
        "ablate:modalities=SPO2",
    ] {
        let sc: Scenario = s.parse().unwrap();
        assert_eq!(sc.to_string(), s);
    }
    assert_eq!("both:ratio=0.3,snr=20".parse::<Scenario>().unwrap(), Scenario::Both { ratio: 0.3, snr_db: 20.0, chance: 1.0 });
    assert_eq!("ablate:modalities=eog+eeg".parse::<Scenario>().unwrap(), Scenario::Ablate(vec![Modality::Eog, Modality::Eeg]));
    for bad in
        ["", "missing", "missing:ratio=1.5", "noisy:snr=x", "both:ratio=0.1", "ablate:modalities=EMG", "clean:ratio=0", "noisy:snr=5,foo=1"]
    {
        assert!(bad.parse::<Scenario>().is_err(), "{bad}");
    }
}

#[test]
fn scenarios_corrupt_in_place() {
    let mut s = crate::EpochStudy::<f64>::zeros("s", 32, vec![0, 1, 0, 1]);
    s.channels.iter_mut().for_each(|c| c.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.7).sin()));
    let orig = s.clone();
    assert!(Scenario::Clean.apply(&mut s, 1).unwrap().is_empty());
    assert_eq!(s, orig);
    let mut a = orig.clone();
    Scenario::Ablate(vec![Modality::Co2]).apply(&mut a, 1).unwrap();
    assert!((0..4).all(|j| !a.is_present(Modality::Co2, j) && a.is_present(Modality::Ecg, j)));
    let mut m = orig.clone();
    let log = Scenario::Missing { ratio: 1.0 }.apply(&mut m, 1).unwrap();
    assert_eq!(log.len(), 24);
    assert!(m.channels.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn grid_orders_by_ratio_then_snr() {
    let rep = |s: &str, au: f64| MetricsReport::from_folds(&s.parse().unwrap(), vec![FoldMetrics { fold: 0, f1: 0.5, auroc: au }], 0, 0.0);
    let reports = vec![
        rep("noisy:snr=10", 0.7),
        rep("both:ratio=0.25,snr=30", 0.6),
        rep("clean", 0.9),
        rep("missing:ratio=0.25", 0.8),
        rep("ablate:modalities=ECG", 0.1),
        rep("noisy:snr=50", 0.85),
    ];
    let rows = grid_rows(&reports).unwrap();
    let keys: Vec<(f64, Option<f64>)> = rows.iter().map(|r| (r.missing_ratio, r.snr_db)).collect();
    assert_eq!(keys, vec![(0.0, None), (0.0, Some(50.0)), (0.0, Some(10.0)), (0.25, None), (0.25, Some(30.0))]);
    let csv = grid_csv(&rows);
    assert_eq!(csv.lines().next().unwrap(), "missing_ratio,snr_db,auroc_mean,auroc_std,auroc_mean_x100,auroc_std_x100");
    assert_eq!(csv.lines().nth(1).unwrap(), "0,,0.900000,0.000000,90.0,0.0");
}

#[test]
fn report_json_schema() {
    let r = MetricsReport::from_folds(
        &Scenario::Missing { ratio: 0.5 },
        vec![FoldMetrics { fold: 0, f1: 0.6, auroc: 0.7 }, FoldMetrics { fold: 1, f1: 0.8, auroc: 0.9 }],
        7,
        1.5,
    );
    let v: serde_json::Value = serde_json::from_slice(&r.to_json().unwrap()).unwrap();
    for key in ["scenario", "folds", "mean", "std", "seed", "runtime_s"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["scenario"], "missing:ratio=0.5");
    assert!((v["mean"]["auroc"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(r.timeless().runtime_s, 0.0);
}

#[test]
fn gradient_suite_passes() {
    let results = gradsuite::run_suite().unwrap();
    assert!(results.len() > 25);
    for r in &results {
        assert!(r.passes(gradsuite::TOLERANCE), "{r:?}");
    }
}
