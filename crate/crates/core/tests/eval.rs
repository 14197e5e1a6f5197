use std::collections::BTreeMap;

use proptest::prelude::*;
use seizure_core::eval::{auc, evaluate_arms, write_onsets_csv, Arm, EvalConfig};
use seizure_core::fusion::EventPriors;
use seizure_core::Error;

/// Pairwise definition: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..12, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (f64::from(s) / 11.0, l)).unzip())
}

proptest! {
    #[test]
    fn matches_pairwise_definition((scores, labels) in scored()) {
        let a = auc(&scores, &labels).unwrap();
        prop_assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn flipping_labels_complements((scores, labels) in scored()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_monotone_transform((scores, labels) in scored()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
    }
}

#[test]
fn ties_count_half() {
    // positives {0.2, 0.5, 0.5}, negatives {0.5, 0.1, 0.9}
    let scores = [0.2, 0.5, 0.5, 0.5, 0.1, 0.9];
    let labels = [true, true, true, false, false, false];
    // wins: 0.2 beats 0.1 (1); each 0.5 beats 0.1 (2) and ties 0.5 (2 x 0.5)
    let expect = (1.0 + 2.0 + 1.0) / 9.0;
    assert!((auc(&scores, &labels).unwrap() - expect).abs() < 1e-15);
}

#[test]
fn invalid_inputs_are_metric_errors() {
    assert!(matches!(auc(&[0.1, f64::NAN], &[true, false]), Err(Error::Metric(_))));
    assert!(matches!(auc(&[0.1], &[true, false]), Err(Error::Metric(_))));
    assert!(matches!(auc(&[0.1, 0.3], &[false, false]), Err(Error::Metric(_))));
}

#[test]
fn arm_names_round_trip() {
    for arm in Arm::ALL {
        assert_eq!(arm.key().parse::<Arm>().unwrap(), arm);
        assert_eq!(arm.label().parse::<Arm>().unwrap(), arm);
        let json = serde_json::to_string(&arm).unwrap();
        assert_eq!(serde_json::from_str::<Arm>(&json).unwrap(), arm);
    }
    assert!("bogus".parse::<Arm>().is_err());
}

#[test]
fn missing_checkpoint_is_config_error() {
    let err = evaluate_arms(&[], &BTreeMap::new(), &EventPriors::uniform(), &[Arm::EegOnly], &EvalConfig::default())
        .unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("EEG-only")), "{err}");
}

#[test]
fn onsets_sidecar_marks_leading() {
    use chrono::{TimeZone, Utc};
    let t = |h, m| Utc.with_ymd_and_hms(2024, 3, 1, h, m, 0).unwrap();
    let mut out = Vec::new();
    write_onsets_csv(&mut out, &[t(1, 0), t(1, 10), t(5, 0)], 30.0).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text,
        "onset,leading\n2024-03-01T01:00:00Z,true\n2024-03-01T01:10:00Z,false\n2024-03-01T05:00:00Z,true\n"
    );
}

#[test]
fn independent_labels_give_half() {
    use rand::Rng as _;
    let mut r = seizure_core::rng::seeded(31);
    let n = 4000;
    let scores: Vec<f64> = (0..n).map(|_| r.gen::<f64>()).collect();
    let labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
    let n1 = labels.iter().filter(|&&l| l).count() as f64;
    let n0 = n as f64 - n1;
    let sigma = ((n1 + n0 + 1.0) / (12.0 * n1 * n0)).sqrt();
    let a = auc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() < 3.0 * sigma, "auc {a}, sigma {sigma}");
}

#[test]
fn uniform_priors_leave_every_arm_unchanged() {
    use seizure_core::checkpoint::Checkpoint;
    use seizure_core::experiment::{prepare_dataset, ExperimentConfig};
    use seizure_core::network::{Architecture, BayesNet};
    use seizure_core::pipeline::dataset::SplitConfig;
    use seizure_core::pipeline::synth::SyntheticSpec;

    let spec = SyntheticSpec {
        n_patients: 2,
        sampling_rate_hz: 32.0,
        n_channels: 2,
        seed: 9,
        ..SyntheticSpec::default()
    };
    let cfg = ExperimentConfig {
        split: SplitConfig {
            max_interictal_train: Some(20),
            max_interictal_test: Some(60),
            ..SplitConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let patients = prepare_dataset(spec.synthesize_dataset().unwrap().into_iter().map(Ok), &cfg).unwrap();
    let shape = patients[0].test[0].features.shape().to_vec();
    let net = BayesNet::new(Architecture::default_for(&shape), Default::default(), &mut seizure_core::rng::seeded(4))
        .unwrap();
    let ckpt = Checkpoint::new(net, 4);
    let arms = [Arm::EegTodDow, Arm::EegTod, Arm::EegOnly];
    let checkpoints: BTreeMap<Arm, Checkpoint> = arms.iter().map(|&a| (a, ckpt.clone())).collect();
    let eval = EvalConfig {
        draws: 12,
        ..EvalConfig::default()
    };
    let report = evaluate_arms(&patients, &checkpoints, &EventPriors::uniform(), &arms, &eval).unwrap();
    let order: Vec<Arm> = report.arms.iter().map(|r| r.arm).collect();
    assert_eq!(order, vec![Arm::EegOnly, Arm::EegTod, Arm::EegTodDow]);
    let base = report.arm(Arm::EegOnly).unwrap();
    assert!(base.macro_auc.is_some());
    for arm in [Arm::EegTod, Arm::EegTodDow] {
        let r = report.arm(arm).unwrap();
        assert_eq!(r.per_patient, base.per_patient, "{arm}");
        assert_eq!(r.pooled_auc, base.pooled_auc, "{arm}");
    }
}
