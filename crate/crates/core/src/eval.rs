//! AUC, four-arm evaluation, timelines and run manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use seizure_tensor::Tensor;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::error::{Error, Result};
use crate::fusion::{EventPriors, FusionMode, FusionSpec};
use crate::pipeline::dataset::PatientData;
use crate::pipeline::labeling::{leading_seizures, window_grid, Label, LabelingConfig};
use crate::pipeline::recording::EEGRecording;
use crate::pipeline::scaling::FeatureScaler;
use crate::pipeline::spectrogram::{Spectrogram, SpectrogramConfig};
use crate::uncertainty::{self, iso_utc, Fusion, SamplingConfig, TimelinePoint};

/// Area under the ROC curve in Mann-Whitney form: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "EEG-only")]
    EegOnly,
    #[serde(rename = "EEG_ToD")]
    EegTod,
    #[serde(rename = "EEG_ToD_DoW")]
    EegTodDow,
}

impl Arm {
    /// Report order.
    pub const ALL: [Arm; 4] = [Arm::Cnn, Arm::EegOnly, Arm::EegTod, Arm::EegTodDow];

    pub fn label(self) -> &'static str {
        match self {
            Arm::Cnn => "CNN",
            Arm::EegOnly => "EEG-only",
            Arm::EegTod => "EEG_ToD",
            Arm::EegTodDow => "EEG_ToD_DoW",
        }
    }

    /// Command-line key.
    pub fn key(self) -> &'static str {
        match self {
            Arm::Cnn => "cnn",
            Arm::EegOnly => "eeg-only",
            Arm::EegTod => "eeg-tod",
            Arm::EegTodDow => "eeg-tod-dow",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self == Arm::Cnn
    }

    pub fn fusion(self, mode: FusionMode, at_training: bool) -> FusionSpec {
        let (tod, dow) = match self {
            Arm::Cnn | Arm::EegOnly => (false, false),
            Arm::EegTod => (true, false),
            Arm::EegTodDow => (true, true),
        };
        FusionSpec {
            tod,
            dow,
            mode,
            at_training,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.key().eq_ignore_ascii_case(s) || a.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let keys: Vec<&str> = Arm::ALL.iter().map(|a| a.key()).collect();
                Error::Config(format!("unknown arm {s:?}; expected one of {}", keys.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub draws: usize,
    pub root_seed: u64,
    pub workers: usize,
    pub fusion_mode: FusionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            draws: uncertainty::DEFAULT_DRAWS,
            root_seed: 0,
            workers: 1,
            fusion_mode: FusionMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientAuc {
    pub patient_id: String,
    /// `None` when the test fold lacks one of the classes.
    pub auc: Option<f64>,
    pub n_preictal: usize,
    pub n_interictal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: Arm,
    pub per_patient: Vec<PatientAuc>,
    /// Unweighted mean of the defined per-patient AUCs.
    pub macro_auc: Option<f64>,
    /// AUC over all test windows pooled across patients.
    pub pooled_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub patient_id: String,
    pub train_preictal: usize,
    pub train_interictal: usize,
    pub test_preictal: usize,
    pub test_interictal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arms: Vec<ArmReport>,
    pub window_counts: Vec<WindowCounts>,
    pub seed: u64,
    pub draws: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }
}

/// Preictal scores of one patient's test windows under one arm: the
/// posterior-mean softmax output for the CNN, the Monte-Carlo mean for the
/// Bayesian arms.
pub fn arm_scores(
    arm: Arm,
    checkpoint: &Checkpoint,
    inputs: &[&Tensor],
    times: &[DateTime<Utc>],
    priors: &EventPriors,
    cfg: &EvalConfig,
) -> Result<Vec<f64>> {
    let spec = arm.fusion(cfg.fusion_mode, true);
    let factors: Option<Vec<f64>> = if spec.is_active() {
        Some(
            times
                .iter()
                .map(|&t| priors.factor(&spec, t).map(|f| f.value))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let fusion = factors.as_deref().map(|f| Fusion {
        factors: f,
        mode: cfg.fusion_mode,
    });
    let scaled = match FeatureScaler::from_metadata(&checkpoint.metadata)? {
        Some(s) => Some(s.apply_all(inputs)?),
        None => None,
    };
    let scaled_refs: Option<Vec<&Tensor>> = scaled.as_ref().map(|v| v.iter().collect());
    let inputs = scaled_refs.as_deref().unwrap_or(inputs);
    let net = &checkpoint.network;
    if arm.is_deterministic() || net.deterministic {
        return uncertainty::point_scores(net, inputs, fusion);
    }
    let sampling = SamplingConfig {
        draws: cfg.draws,
        root_seed: cfg.root_seed,
        workers: cfg.workers,
    };
    Ok(uncertainty::sample_batch_predictions(net, inputs, fusion, &sampling)?
        .into_iter()
        .map(|d| d.mean)
        .collect())
}

/// Scores every requested arm on the test folds. Patients are processed
/// in the given order and arms in [`Arm::ALL`] order.
pub fn evaluate_arms(
    patients: &[PatientData],
    checkpoints: &BTreeMap<Arm, Checkpoint>,
    priors: &EventPriors,
    arms: &[Arm],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let missing: Vec<&str> = arms
        .iter()
        .filter(|a| !checkpoints.contains_key(a))
        .map(|a| a.label())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing checkpoints for arms: {}", missing.join(", "))));
    }
    let mut reports = Vec::new();
    for arm in Arm::ALL.into_iter().filter(|a| arms.contains(a)) {
        let ckpt = &checkpoints[&arm];
        let mut per_patient = Vec::with_capacity(patients.len());
        let (mut all_scores, mut all_labels) = (Vec::new(), Vec::new());
        for p in patients {
            let inputs: Vec<&Tensor> = p.test.iter().map(|w| &w.features).collect();
            let times: Vec<DateTime<Utc>> = p.test.iter().map(|w| w.window_start).collect();
            let labels: Vec<bool> = p.test.iter().map(|w| w.label == Label::Preictal).collect();
            let n_pre = labels.iter().filter(|&&l| l).count();
            let n_inter = labels.len() - n_pre;
            let auc = if n_pre > 0 && n_inter > 0 {
                let scores = arm_scores(arm, ckpt, &inputs, &times, priors, cfg)?;
                let a = auc(&scores, &labels)?;
                all_scores.extend(scores);
                all_labels.extend(labels);
                Some(a)
            } else {
                log::warn!("{}: test fold lacks a class; AUC undefined", p.patient_id);
                None
            };
            log::info!("{arm} {}: auc {auc:?}", p.patient_id);
            per_patient.push(PatientAuc {
                patient_id: p.patient_id.clone(),
                auc,
                n_preictal: n_pre,
                n_interictal: n_inter,
            });
        }
        let defined: Vec<f64> = per_patient.iter().filter_map(|p| p.auc).collect();
        let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let pooled_auc = auc(&all_scores, &all_labels).ok();
        reports.push(ArmReport {
            arm,
            per_patient,
            macro_auc,
            pooled_auc,
        });
    }
    let window_counts = patients
        .iter()
        .map(|p| {
            use crate::pipeline::dataset::Fold;
            WindowCounts {
                patient_id: p.patient_id.clone(),
                train_preictal: p.count(Fold::Train, Label::Preictal),
                train_interictal: p.count(Fold::Train, Label::Interictal),
                test_preictal: p.count(Fold::Test, Label::Preictal),
                test_interictal: p.count(Fold::Test, Label::Interictal),
            }
        })
        .collect();
    Ok(EvalReport {
        arms: reports,
        window_counts,
        seed: cfg.root_seed,
        draws: cfg.draws,
        config: serde_json::to_value(cfg)?,
    })
}

/// Settings for continuous inference over a whole recording.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineConfig {
    pub labeling: LabelingConfig,
    pub spectrogram: SpectrogramConfig,
    pub sampling: SamplingConfig,
    pub fusion: FusionSpec,
    /// Windows featurized and scored together.
    pub batch: usize,
}

/// Monte-Carlo scores for every grid window of a recording, including the
/// windows no label applies to.
pub fn timeline(
    rec: &EEGRecording,
    checkpoint: &Checkpoint,
    priors: &EventPriors,
    cfg: &TimelineConfig,
) -> Result<Vec<TimelinePoint>> {
    let spec = Spectrogram::new(cfg.spectrogram, rec.sampling_rate_hz)?;
    let scaler = FeatureScaler::from_metadata(&checkpoint.metadata)?;
    let len = (cfg.labeling.window_sec * rec.sampling_rate_hz).round() as usize;
    let grid = window_grid(rec.start_time, rec.n_samples(), rec.sampling_rate_hz, &cfg.labeling);
    let mut points = Vec::with_capacity(grid.len());
    for chunk in grid.chunks(cfg.batch.max(1)) {
        let feats = chunk
            .iter()
            .map(|w| {
                let f = spec.compute(&rec.segment(w.start_sample, len))?;
                match &scaler {
                    Some(s) => s.apply(&f),
                    None => Ok(f),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&Tensor> = feats.iter().collect();
        let factors: Option<Vec<f64>> = if cfg.fusion.is_active() {
            Some(
                chunk
                    .iter()
                    .map(|w| priors.factor(&cfg.fusion, w.start_time).map(|f| f.value))
                    .collect::<Result<_>>()?,
            )
        } else {
            None
        };
        let fusion = factors.as_deref().map(|f| Fusion {
            factors: f,
            mode: cfg.fusion.mode,
        });
        let dists = uncertainty::sample_batch_predictions(&checkpoint.network, &inputs, fusion, &cfg.sampling)?;
        points.extend(
            chunk
                .iter()
                .zip(&dists)
                .map(|(w, d)| TimelinePoint::new(w.start_time, d, cfg.fusion.is_active())),
        );
    }
    Ok(points)
}

/// Sidecar listing every onset and whether it leads its cluster.
pub fn write_onsets_csv<W: Write>(mut w: W, onsets: &[DateTime<Utc>], merge_min: f64) -> Result<()> {
    let leading = leading_seizures(onsets, merge_min)?;
    writeln!(w, "onset,leading")?;
    for t in onsets {
        writeln!(w, "{},{}", iso_utc(*t), leading.contains(t))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path)?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            args,
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }
}
