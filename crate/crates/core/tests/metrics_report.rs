use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xgrade::metrics::report::{self, ClassReport, Predictions};
use xgrade::metrics::{self, auc, confusion_counts, operating_point, roc_curve, ConfusionCounts, Target};
use xgrade::Error;

fn sample(n: usize, levels: u32, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = labels
        .iter()
        .map(|&l| {
            let raw = (rng.random::<f64>() * 0.8 + 0.2 * l as f64).min(1.0);
            (raw * levels as f64).round() / levels as f64
        })
        .collect();
    (scores, labels)
}

#[test]
fn counts_match_a_plain_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let (scores, labels) = sample(rng.random_range(2..60), 10, &mut rng);
        let t = [0.0, 0.3, 0.5, 0.7, 1.0][rng.random_range(0..5)];
        let mut want = ConfusionCounts::default();
        for (&s, &l) in scores.iter().zip(&labels) {
            match (s >= t, l == 1) {
                (true, true) => want.tp += 1,
                (true, false) => want.fp += 1,
                (false, false) => want.tn += 1,
                (false, true) => want.fn_ += 1,
            }
        }
        assert_eq!(confusion_counts(&scores, &labels, t).unwrap(), want);
    }
}

#[test]
fn rate_boundaries() {
    let c = ConfusionCounts { tp: 5, fp: 0, tn: 4, fn_: 0 };
    assert_eq!(metrics::sensitivity(&c).unwrap(), 1.0);
    assert_eq!(metrics::specificity(&c).unwrap(), 1.0);
    let no_neg = ConfusionCounts { tp: 5, ..Default::default() };
    assert!(matches!(metrics::specificity(&no_neg), Err(Error::UndefinedMetric(_))));
}

#[test]
fn single_class_labels_are_undefined() {
    assert!(matches!(roc_curve(&[0.1, 0.9], &[1, 1]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn inverted_labels_complement_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (scores, labels) = sample(rng.random_range(2..200), 7, &mut rng);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let (a, b) = (auc(&scores, &labels).unwrap(), auc(&scores, &flipped).unwrap());
        assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn auc_is_invariant_under_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (scores, labels) = sample(rng.random_range(2..300), 25, &mut rng);
        let base = auc(&scores, &labels).unwrap();
        let cube: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let squash: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-5.0 * s).exp())).collect();
        assert_eq!(auc(&cube, &labels).unwrap(), base);
        assert_eq!(auc(&squash, &labels).unwrap(), base);
    }
}

#[test]
fn roc_points_are_monotone_and_anchored() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (scores, labels) = sample(rng.random_range(2..100), 9, &mut rng);
        let roc = roc_curve(&scores, &labels).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        assert_eq!((first.threshold, first.fpr, first.tpr), (f64::INFINITY, 0.0, 0.0));
        assert_eq!((last.threshold, last.fpr, last.tpr), (f64::NEG_INFINITY, 1.0, 1.0));
        for w in roc.points.windows(2) {
            assert!(w[1].threshold < w[0].threshold);
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        // Each finite point agrees with a direct count at its threshold.
        for p in &roc.points[1..roc.points.len() - 1] {
            let c = confusion_counts(&scores, &labels, p.threshold).unwrap();
            assert_eq!((c.tp, c.fp), (p.tp, p.fp));
        }
    }
}

#[test]
fn operating_point_examples() {
    let roc = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0]).unwrap();
    let p = operating_point(&roc, Target::Sensitivity(0.9)).unwrap();
    assert_eq!((p.sensitivity, p.specificity), (1.0, 1.0));
    let p = operating_point(&roc, Target::Sensitivity(0.0)).unwrap();
    assert_eq!(p.specificity, 1.0);
    let p = operating_point(&roc, Target::YoudenMax).unwrap();
    assert_eq!(p.threshold, 0.8);
}

#[test]
fn unachievable_target_reports_best() {
    let roc = roc_curve(&[0.9, 0.1], &[1, 0]).unwrap();
    let err = operating_point(&roc, Target::Sensitivity(1.5)).unwrap_err();
    assert!(err.to_string().contains("best achievable is 1"), "{err}");
}

#[test]
fn operating_point_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let (scores, labels) = sample(rng.random_range(2..80), 12, &mut rng);
        let roc = roc_curve(&scores, &labels).unwrap();
        let s = rng.random::<f64>();
        let got = operating_point(&roc, Target::Sensitivity(s)).unwrap();
        // Brute force over every candidate threshold, lowest first.
        let mut thresholds: Vec<f64> = scores.clone();
        thresholds.extend([f64::INFINITY, f64::NEG_INFINITY]);
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let mut best: Option<(f64, f64, f64)> = None;
        for t in thresholds {
            // Scores live in [0, 1], so 2 and 0 stand in for the infinite thresholds.
            let probe = if t == f64::INFINITY { 2.0 } else { t.max(0.0) };
            let c = confusion_counts(&scores, &labels, probe).unwrap();
            let (sens, spec) = (c.tp as f64 / c.positives() as f64, c.tn as f64 / c.negatives() as f64);
            if sens >= s && best.is_none_or(|(_, _, b)| spec > b) {
                best = Some((t, sens, spec));
            }
        }
        let (t, sens, spec) = best.unwrap();
        assert_eq!((got.threshold, got.sensitivity, got.specificity), (t, sens, spec));
    }
}

fn perfect(name: &str) -> ClassReport {
    ClassReport {
        name: name.into(),
        threshold: 0.5,
        counts: ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 },
        sensitivity: Some(1.0),
        specificity: Some(1.0),
        auc: Some(1.0),
    }
}

#[test]
fn perfect_report_row() {
    let csv = report::performance_csv(&[perfect("pneumonia")]);
    assert_eq!(csv.lines().nth(1), Some("pneumonia,1.000,1.000,1.000"));
}

#[test]
fn undefined_values_print_as_na() {
    let mut r = perfect("tb");
    r.specificity = None;
    r.auc = None;
    assert!(report::performance_csv(&[r.clone()]).ends_with("tb,1.000,n/a,n/a\n"));
    assert!(report::auc_table_csv(&[r]).ends_with("tb,n/a\n"));
}

#[test]
fn names_with_commas_are_quoted() {
    let csv = report::auc_table_csv(&[perfect("Mass, left")]);
    assert_eq!(csv, "Abnormalities,AUC\n\"Mass, left\",1.000\n");
}

#[test]
fn roc_csv_is_bit_stable() {
    let roc = roc_curve(&[0.75, 0.25, 0.5], &[1, 0, 1]).unwrap();
    let csv = report::roc_csv(&roc);
    assert_eq!(csv, "threshold,fpr,tpr\ninf,0,0\n0.75,0,0.5\n0.5,0,1\n0.25,1,1\n-inf,1,1\n");
    assert_eq!(report::roc_csv(&roc_curve(&[0.75, 0.25, 0.5], &[1, 0, 1]).unwrap()), csv);
}

#[test]
fn predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = Predictions {
        classes: vec!["pneumonia".into(), "tb".into()],
        ids: vec!["a.ppm".into(), "b.ppm".into()],
        scores: vec![vec![0.25, 0.125], vec![1.0, 0.0078125]],
    };
    let path = dir.path().join("p.csv");
    report::write_predictions(&path, &p).unwrap();
    assert_eq!(report::read_predictions(&path).unwrap(), p);
}

proptest! {
    #[test]
    fn auc_within_unit_interval(scores in proptest::collection::vec(0.0f64..=1.0, 2..100), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = scores.iter().map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
