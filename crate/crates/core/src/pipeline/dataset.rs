//! Labeled feature windows and the per-patient train/test split.
//!
//! Split: the last `holdout_seizures` leading seizures of each patient go
//! to the test fold. The fold starts at the preictal start of the first
//! held-out seizure; windows ending before it are training windows, windows
//! starting at or after it are test windows, and the one or two windows
//! straddling it are dropped.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use seizure_tensor::Tensor;

use super::labeling::{label_recording, leading_seizures, Label, LabelingConfig, WindowSpan};
use super::recording::{seconds, EEGRecording};
use super::spectrogram::{Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub patient_id: String,
    pub window_start: DateTime<Utc>,
    pub label: Label,
    pub features: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub holdout_seizures: usize,
    /// Evenly spaced subset of interictal windows per patient and fold.
    pub max_interictal_train: Option<usize>,
    pub max_interictal_test: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            holdout_seizures: 1,
            max_interictal_train: None,
            max_interictal_test: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Test,
}

/// Labeled spans of one recording assigned to folds, before features.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<(WindowSpan, Label)>,
    pub test: Vec<(WindowSpan, Label)>,
    /// Leading onsets before the test fold.
    pub train_leading: Vec<DateTime<Utc>>,
    pub test_leading: Vec<DateTime<Utc>>,
    pub test_start: Option<DateTime<Utc>>,
}

/// Every `n / cap`-th element (rounded down), keeping order.
pub fn even_subsample<T: Clone>(items: &[T], cap: usize) -> Vec<T> {
    let n = items.len();
    if cap >= n {
        return items.to_vec();
    }
    (0..cap).map(|i| items[i * n / cap].clone()).collect()
}

fn cap_interictal(spans: Vec<(WindowSpan, Label)>, cap: Option<usize>) -> Vec<(WindowSpan, Label)> {
    let Some(cap) = cap else { return spans };
    let (pre, inter): (Vec<_>, Vec<_>) = spans.into_iter().partition(|s| s.1 == Label::Preictal);
    let mut out = pre;
    out.extend(even_subsample(&inter, cap));
    out.sort_by_key(|s| s.0.start_sample);
    out
}

pub fn plan_split(rec: &EEGRecording, labeling: &LabelingConfig, split: &SplitConfig) -> Result<SplitPlan> {
    let spans = label_recording(rec, labeling)?;
    let leading = leading_seizures(&rec.seizure_onsets, labeling.leading_merge_min)?;
    let k = split.holdout_seizures.min(leading.len());
    let (train_leading, test_leading) = leading.split_at(leading.len() - k);
    let test_start: Option<DateTime<Utc>> = test_leading
        .first()
        .map(|&o| o - seconds((labeling.sph_min + labeling.sop_min) * 60.0));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in spans {
        match test_start {
            Some(cut) if s.0.start_time >= cut => test.push(s),
            Some(cut) if s.0.end_time > cut => {}
            _ => train.push(s),
        }
    }
    Ok(SplitPlan {
        train: cap_interictal(train, split.max_interictal_train),
        test: cap_interictal(test, split.max_interictal_test),
        train_leading: train_leading.to_vec(),
        test_leading: test_leading.to_vec(),
        test_start,
    })
}

/// Feature tensors for labeled spans of a recording.
pub fn featurize(rec: &EEGRecording, spans: &[(WindowSpan, Label)], spec: &Spectrogram, window_len: usize) -> Result<Vec<LabeledWindow>> {
    spans
        .iter()
        .map(|(w, l)| {
            Ok(LabeledWindow {
                patient_id: rec.patient_id.clone(),
                window_start: w.start_time,
                label: *l,
                features: spec.compute(&rec.segment(w.start_sample, window_len))?,
            })
        })
        .collect()
}

/// Labeled windows with features, ready for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientData {
    pub patient_id: String,
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub train_leading: Vec<DateTime<Utc>>,
    pub test_leading: Vec<DateTime<Utc>>,
    pub test_start: Option<DateTime<Utc>>,
}

impl PatientData {
    pub fn windows(&self, fold: Fold) -> &[LabeledWindow] {
        match fold {
            Fold::Train => &self.train,
            Fold::Test => &self.test,
        }
    }

    pub fn count(&self, fold: Fold, label: Label) -> usize {
        self.windows(fold).iter().filter(|w| w.label == label).count()
    }
}

/// Labels, splits and featurizes one recording.
pub fn prepare_patient(
    rec: &EEGRecording,
    labeling: &LabelingConfig,
    spectrogram: &SpectrogramConfig,
    split: &SplitConfig,
) -> Result<PatientData> {
    let plan = plan_split(rec, labeling, split)?;
    let spec = Spectrogram::new(*spectrogram, rec.sampling_rate_hz)?;
    let window_len = (labeling.window_sec * rec.sampling_rate_hz).round() as usize;
    Ok(PatientData {
        patient_id: rec.patient_id.clone(),
        train: featurize(rec, &plan.train, &spec, window_len)?,
        test: featurize(rec, &plan.test, &spec, window_len)?,
        train_leading: plan.train_leading,
        test_leading: plan.test_leading,
        test_start: plan.test_start,
    })
}

/// Shape of the feature tensor for a given labeling and recording layout.
pub fn feature_shape(labeling: &LabelingConfig, spectrogram: &SpectrogramConfig, fs: f64, n_channels: usize) -> Result<Vec<usize>> {
    let spec = Spectrogram::new(*spectrogram, fs)?;
    let (bands, frames) = spec.output_dims((labeling.window_sec * fs).round() as usize);
    if frames == 0 {
        return Err(Error::Config("window too short for the spectrogram settings".into()));
    }
    Ok(vec![n_channels, bands, frames])
}

/// Distance helper for tests and reports.
pub fn minutes_between(a: DateTime<Utc>, b: DateTime<Utc>) -> f64 {
    (b - a).num_milliseconds() as f64 / 60_000.0
}
