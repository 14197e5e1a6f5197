//! End-to-end runs: prepare windows, fit priors, train arms, evaluate.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use seizure_tensor::Tensor;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate_arms, Arm, EvalConfig, EvalReport};
use crate::fusion::{EventPriors, KdeMode};
use crate::pipeline::dataset::{prepare_patient, PatientData, SplitConfig};
use crate::pipeline::labeling::LabelingConfig;
use crate::pipeline::recording::EEGRecording;
use crate::pipeline::scaling::{self, FeatureScaler};
use crate::pipeline::spectrogram::SpectrogramConfig;
use crate::svi::{train, TrainConfig, TrainOutcome, TrainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub labeling: LabelingConfig,
    pub spectrogram: SpectrogramConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub kde_mode: KdeMode,
    /// Apply the fusion factor during training as well as at inference.
    pub fusion_at_training: bool,
    /// Standardize features with statistics of the training windows.
    pub standardize_features: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            labeling: LabelingConfig::default(),
            spectrogram: SpectrogramConfig::default(),
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            kde_mode: KdeMode::Circular,
            fusion_at_training: true,
            standardize_features: true,
        }
    }
}

/// Labels, splits and featurizes recordings one at a time so only one raw
/// signal is held in memory.
pub fn prepare_dataset<I>(recordings: I, cfg: &ExperimentConfig) -> Result<Vec<PatientData>>
where
    I: IntoIterator<Item = Result<EEGRecording>>,
{
    cfg.labeling.validate()?;
    recordings
        .into_iter()
        .map(|r| {
            let rec = r?;
            let p = prepare_patient(&rec, &cfg.labeling, &cfg.spectrogram, &cfg.split)?;
            log::info!(
                "{}: {} train / {} test windows",
                p.patient_id,
                p.train.len(),
                p.test.len()
            );
            Ok(p)
        })
        .collect()
}

/// Leading onsets of every training fold, pooled across patients.
pub fn training_onsets(patients: &[PatientData]) -> Vec<DateTime<Utc>> {
    patients.iter().flat_map(|p| p.train_leading.iter().copied()).collect()
}

pub fn fit_event_priors(patients: &[PatientData], mode: KdeMode) -> Result<EventPriors> {
    let onsets = training_onsets(patients);
    if onsets.is_empty() {
        return Err(Error::Fit("no training-fold seizures to fit event priors".into()));
    }
    EventPriors::fit(&onsets, mode)
}

/// Pooled training windows with per-window fusion factors for `arm`.
pub fn training_set<'a>(
    patients: &'a [PatientData],
    arm: Arm,
    priors: &EventPriors,
    cfg: &ExperimentConfig,
) -> Result<TrainSet<'a>> {
    let windows: Vec<_> = patients.iter().flat_map(|p| p.train.iter()).collect();
    let inputs: Vec<&Tensor> = windows.iter().map(|w| &w.features).collect();
    let labels = windows.iter().map(|w| w.label.class()).collect();
    let spec = arm.fusion(cfg.eval.fusion_mode, cfg.fusion_at_training);
    let factors = if spec.is_active() && spec.at_training {
        Some(
            windows
                .iter()
                .map(|w| priors.factor(&spec, w.window_start).map(|f| f.value))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(TrainSet {
        inputs,
        labels,
        factors,
    })
}

pub fn train_arm(patients: &[PatientData], arm: Arm, priors: &EventPriors, cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let data = training_set(patients, arm, priors, cfg)?;
    let tc = TrainConfig {
        deterministic: arm.is_deterministic(),
        fusion_mode: cfg.eval.fusion_mode,
        ..cfg.train.clone()
    };
    let scaler = if cfg.standardize_features {
        Some(FeatureScaler::fit(&data.inputs)?)
    } else {
        None
    };
    let mut out = match &scaler {
        Some(s) => {
            let scaled = s.apply_all(&data.inputs)?;
            let data = TrainSet {
                inputs: scaled.iter().collect(),
                ..data
            };
            train(&data, &tc)?
        }
        None => train(&data, &tc)?,
    };
    if let serde_json::Value::Object(m) = &mut out.checkpoint.metadata {
        if let Some(s) = &scaler {
            m.insert(scaling::METADATA_KEY.into(), serde_json::to_value(s)?);
        }
        m.insert("arm".into(), serde_json::to_value(arm)?);
        m.insert("labeling".into(), serde_json::to_value(cfg.labeling)?);
        m.insert("spectrogram".into(), serde_json::to_value(cfg.spectrogram)?);
    }
    Ok(out)
}

pub struct ExperimentResult {
    pub priors: EventPriors,
    pub outcomes: BTreeMap<Arm, TrainOutcome>,
    pub report: EvalReport,
}

impl ExperimentResult {
    pub fn checkpoints(&self) -> BTreeMap<Arm, &Checkpoint> {
        self.outcomes.iter().map(|(a, o)| (*a, &o.checkpoint)).collect()
    }
}

/// Trains and evaluates `arms` on prepared patients.
pub fn run_experiment(patients: &[PatientData], arms: &[Arm], cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let priors = fit_event_priors(patients, cfg.kde_mode)?;
    let mut outcomes = BTreeMap::new();
    for &arm in arms {
        log::info!("training {arm}");
        outcomes.insert(arm, train_arm(patients, arm, &priors, cfg)?);
    }
    let checkpoints: BTreeMap<Arm, Checkpoint> = outcomes.iter().map(|(a, o)| (*a, o.checkpoint.clone())).collect();
    let report = evaluate_arms(patients, &checkpoints, &priors, arms, &cfg.eval)?;
    Ok(ExperimentResult {
        priors,
        outcomes,
        report,
    })
}
