//! Seizure clustering and preictal / interictal window labels.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::recording::{seconds, EEGRecording};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    /// Gap between the end of the preictal window and the onset.
    pub sph_min: f64,
    /// Length of the preictal window.
    pub sop_min: f64,
    /// Interictal windows keep at least this distance from every onset.
    pub interictal_gap_hours: f64,
    /// Onsets closer than this to the previous one join its cluster.
    pub leading_merge_min: f64,
    pub window_sec: f64,
    pub window_step_sec: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            sph_min: 5.0,
            sop_min: 30.0,
            interictal_gap_hours: 4.0,
            leading_merge_min: 30.0,
            window_sec: 30.0,
            window_step_sec: 15.0,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sph_min", self.sph_min),
            ("sop_min", self.sop_min),
            ("leading_merge_min", self.leading_merge_min),
            ("window_sec", self.window_sec),
            ("window_step_sec", self.window_step_sec),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.interictal_gap_hours * 60.0 > self.sph_min + self.sop_min) {
            return Err(Error::Config(format!(
                "interictal gap {} h must exceed sph + sop = {} min",
                self.interictal_gap_hours,
                self.sph_min + self.sop_min
            )));
        }
        Ok(())
    }

    /// Number of grid windows fully inside one preictal interval, assuming
    /// the interval edges fall on the grid.
    pub fn preictal_windows_per_seizure(&self) -> usize {
        ((self.sop_min * 60.0 - self.window_sec) / self.window_step_sec).floor() as usize + 1
    }

    fn minutes(m: f64) -> Duration {
        seconds(m * 60.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Interictal = 0,
    Preictal = 1,
}

impl Label {
    pub fn class(self) -> usize {
        self as usize
    }
}

/// First onset of every cluster. Greedy left to right: an onset less than
/// `merge_min` after the most recent onset of the current cluster joins it.
pub fn leading_seizures(onsets: &[DateTime<Utc>], merge_min: f64) -> Result<Vec<DateTime<Utc>>> {
    if onsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Contract("onsets must be sorted ascending".into()));
    }
    let merge = LabelingConfig::minutes(merge_min);
    let mut leading = Vec::new();
    let mut cluster_end: Option<DateTime<Utc>> = None;
    for &t in onsets {
        match cluster_end {
            Some(end) if t - end < merge => {}
            _ => leading.push(t),
        }
        cluster_end = Some(t);
    }
    Ok(leading)
}

/// A window on the recording's sliding grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpan {
    pub start_sample: usize,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
}

/// Every window of `window_sec`, stepped by `window_step_sec` from the
/// recording start, that fits inside the recording.
pub fn window_grid(start_time: DateTime<Utc>, n_samples: usize, fs: f64, cfg: &LabelingConfig) -> Vec<WindowSpan> {
    let len = (cfg.window_sec * fs).round() as usize;
    let step = ((cfg.window_step_sec * fs).round() as usize).max(1);
    if len == 0 || len > n_samples {
        return Vec::new();
    }
    (0..=(n_samples - len) / step)
        .map(|k| {
            let s = k * step;
            WindowSpan {
                start_sample: s,
                start_time: start_time + seconds(s as f64 / fs),
                end_time: start_time + seconds((s + len) as f64 / fs),
            }
        })
        .collect()
}

/// Label of one window, or `None` for the discarded zone.
pub fn window_label(
    span: &WindowSpan,
    leading: &[DateTime<Utc>],
    all_onsets: &[DateTime<Utc>],
    cfg: &LabelingConfig,
) -> Option<Label> {
    let before = LabelingConfig::minutes(cfg.sph_min + cfg.sop_min);
    let horizon = LabelingConfig::minutes(cfg.sph_min);
    let preictal = leading
        .iter()
        .any(|&o| span.start_time >= o - before && span.end_time <= o - horizon);
    if preictal {
        return Some(Label::Preictal);
    }
    let gap = LabelingConfig::minutes(cfg.interictal_gap_hours * 60.0);
    let interictal = all_onsets
        .iter()
        .all(|&o| span.end_time <= o - gap || span.start_time >= o + gap);
    interictal.then_some(Label::Interictal)
}

/// Labeled grid windows of a recording, in time order; the discarded zone
/// is dropped.
pub fn label_spans(
    start_time: DateTime<Utc>,
    n_samples: usize,
    fs: f64,
    onsets: &[DateTime<Utc>],
    cfg: &LabelingConfig,
) -> Result<Vec<(WindowSpan, Label)>> {
    cfg.validate()?;
    let leading = leading_seizures(onsets, cfg.leading_merge_min)?;
    Ok(window_grid(start_time, n_samples, fs, cfg)
        .into_iter()
        .filter_map(|w| window_label(&w, &leading, onsets, cfg).map(|l| (w, l)))
        .collect())
}

pub fn label_recording(rec: &EEGRecording, cfg: &LabelingConfig) -> Result<Vec<(WindowSpan, Label)>> {
    label_spans(
        rec.start_time,
        rec.n_samples(),
        rec.sampling_rate_hz,
        &rec.seizure_onsets,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn min(m: f64) -> DateTime<Utc> {
        t0() + seconds(m * 60.0)
    }

    #[test]
    fn merge_examples() {
        assert!(leading_seizures(&[], 30.0).unwrap().is_empty());
        assert_eq!(
            leading_seizures(&[min(0.0), min(20.0), min(100.0)], 30.0).unwrap(),
            vec![min(0.0), min(100.0)]
        );
        // chained: each within 30 min of the previous one
        assert_eq!(
            leading_seizures(&[min(0.0), min(25.0), min(50.0), min(80.0)], 30.0).unwrap(),
            vec![min(0.0), min(80.0)]
        );
        assert!(leading_seizures(&[min(5.0), min(1.0)], 30.0).is_err());
    }

    #[test]
    fn single_onset_preictal_bounds() {
        let cfg = LabelingConfig::default();
        let fs = 4.0;
        let n = (12.0 * 3600.0 * fs) as usize;
        let onset = t0() + seconds(10.0 * 3600.0);
        let spans = label_spans(t0(), n, fs, &[onset], &cfg).unwrap();
        let pre: Vec<_> = spans.iter().filter(|s| s.1 == Label::Preictal).collect();
        assert_eq!(pre.first().unwrap().0.start_time, Utc.with_ymd_and_hms(2024, 1, 1, 9, 25, 0).unwrap());
        assert_eq!(pre.last().unwrap().0.end_time, Utc.with_ymd_and_hms(2024, 1, 1, 9, 55, 0).unwrap());
        assert_eq!(pre.len(), cfg.preictal_windows_per_seizure());
        assert_eq!(pre.len(), 119);
        // two hours before onset is neither class
        let w = WindowSpan {
            start_sample: 0,
            start_time: onset - seconds(7200.0),
            end_time: onset - seconds(7170.0),
        };
        assert_eq!(window_label(&w, &[onset], &[onset], &cfg), None);
    }

    #[test]
    fn invalid_config() {
        let cfg = LabelingConfig {
            interictal_gap_hours: 0.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
