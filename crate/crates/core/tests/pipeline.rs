use chrono::Duration;
use rand::Rng as _;
use seizure_core::pipeline::dataset::{feature_shape, plan_split, prepare_patient, Fold, SplitConfig};
use seizure_core::pipeline::labeling::{leading_seizures, Label, LabelingConfig};
use seizure_core::pipeline::recording::EEGRecording;
use seizure_core::pipeline::spectrogram::{SpectrogramConfig, Stft};
use seizure_core::pipeline::synth::SyntheticSpec;
use seizure_core::rng;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_patients: 3,
        sampling_rate_hz: 32.0,
        n_channels: 2,
        seed: 5,
        ..SyntheticSpec::default()
    }
}

#[test]
fn synthesis_is_reproducible() {
    let spec = small_spec();
    let a = spec.synthesize_patient(1).unwrap();
    assert_eq!(a, spec.synthesize_patient(1).unwrap());
    assert_ne!(a, spec.synthesize_patient(2).unwrap());
    let other = SyntheticSpec { seed: 6, ..spec };
    assert_ne!(a, other.synthesize_patient(1).unwrap());
}

#[test]
fn onset_plans_respect_spacing() {
    let spec = SyntheticSpec {
        n_patients: 40,
        ..small_spec()
    };
    for i in 0..spec.n_patients {
        let plan = spec.plan_onsets(i).unwrap();
        assert_eq!(plan.leading.len(), spec.leading_per_patient());
        assert_eq!(leading_seizures(&plan.all, 30.0).unwrap(), plan.leading);
        let end = plan.start_time + Duration::hours(24);
        for o in &plan.all {
            assert!(*o >= plan.start_time + Duration::minutes(40) && *o < end);
            assert_eq!((*o - plan.start_time).num_milliseconds() % 15_000, 0);
        }
        for w in plan.leading.windows(2) {
            assert!(w[1] - w[0] >= Duration::minutes(90));
        }
    }
}

#[test]
fn split_has_no_leakage() {
    let spec = small_spec();
    let labeling = LabelingConfig::default();
    for i in 0..spec.n_patients {
        let rec = spec.synthesize_patient(i).unwrap();
        let plan = plan_split(&rec, &labeling, &SplitConfig::default()).unwrap();
        let cut = plan.test_start.unwrap();
        assert_eq!(plan.test_leading.len(), 1);
        assert_eq!(cut, plan.test_leading[0] - Duration::minutes(35));
        assert!(plan.train.iter().all(|(w, _)| w.end_time <= cut));
        assert!(plan.test.iter().all(|(w, _)| w.start_time >= cut));
        // every leading seizure here is far enough from its neighbours to
        // contribute a full preictal interval
        let pre = plan.train.iter().filter(|s| s.1 == Label::Preictal).count();
        assert_eq!(pre, plan.train_leading.len() * labeling.preictal_windows_per_seizure());
        let pre = plan.test.iter().filter(|s| s.1 == Label::Preictal).count();
        assert_eq!(pre, labeling.preictal_windows_per_seizure());
    }
}

#[test]
fn interictal_caps_apply_per_fold() {
    let spec = small_spec();
    let rec = spec.synthesize_patient(0).unwrap();
    let split = SplitConfig {
        holdout_seizures: 1,
        max_interictal_train: Some(50),
        max_interictal_test: Some(20),
    };
    let data = prepare_patient(&rec, &LabelingConfig::default(), &SpectrogramConfig::default(), &split).unwrap();
    assert!(data.count(Fold::Train, Label::Interictal) <= 50);
    assert!(data.count(Fold::Test, Label::Interictal) <= 20);
    assert_eq!(data.count(Fold::Test, Label::Preictal), 119);
    let shape = feature_shape(&LabelingConfig::default(), &SpectrogramConfig::default(), 32.0, 2).unwrap();
    assert!(data.train.iter().chain(&data.test).all(|w| w.features.shape() == shape.as_slice()));
    assert!(data.train.windows(2).all(|w| w[0].window_start < w[1].window_start));
}

#[test]
fn feature_shape_at_common_rates() {
    let l = LabelingConfig::default();
    let s = SpectrogramConfig::default();
    assert_eq!(feature_shape(&l, &s, 128.0, 19).unwrap(), vec![19, 8, 8]);
    assert_eq!(feature_shape(&l, &s, 256.0, 19).unwrap(), vec![19, 8, 8]);
}

#[test]
fn recording_round_trips_through_disk() {
    let spec = SyntheticSpec {
        hours_per_patient: 1.0,
        seizures_per_day: 0.0,
        ..small_spec()
    };
    let rec = spec.synthesize_patient(0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = rec.write(dir.path(), "p0").unwrap();
    assert_eq!(EEGRecording::read(&meta).unwrap(), rec);
}

#[test]
fn stft_satisfies_parseval() {
    let nfft = 256;
    let hop = nfft / 4;
    let mut r = rng::seeded(3);
    let x: Vec<f64> = (0..1 << 16).map(|_| r.gen_range(-1.0..1.0)).collect();
    let stft = Stft::new(nfft, hop).unwrap();
    let frames = stft.transform(&x).unwrap();
    let spectral: f64 = frames
        .iter()
        .map(|f| {
            let last = f.len() - 1;
            f.iter()
                .enumerate()
                .map(|(k, c)| c.norm_sqr() * if k == 0 || k == last { 1.0 } else { 2.0 })
                .sum::<f64>()
        })
        .sum();
    // squared periodic Hann windows at quarter hop overlap-add to 3/2
    let covered = (frames.len() - 1) * hop + nfft;
    let energy: f64 = x[..covered].iter().map(|v| v * v).sum();
    let ratio = spectral / (nfft as f64 * 1.5 * energy);
    assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
}
