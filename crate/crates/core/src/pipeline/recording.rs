//! Multichannel EEG recordings and their on-disk container.
//!
//! A recording is stored as `<stem>.json` (metadata) next to `<stem>.f32`,
//! raw little-endian `f32` samples, frame-major with channels interleaved.
//! In memory the signal is channel-major.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const RECORDING_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 256.0;

/// 10-20 system scalp electrodes.
pub const STANDARD_CHANNELS: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EEGRecording {
    pub patient_id: String,
    pub sampling_rate_hz: f64,
    pub start_time: DateTime<Utc>,
    pub channel_names: Vec<String>,
    pub seizure_onsets: Vec<DateTime<Utc>>,
    n_samples: usize,
    data: Vec<f32>,
}

/// Offset of `seconds` as a chrono duration, rounded to the nanosecond.
pub fn seconds(seconds: f64) -> Duration {
    Duration::nanoseconds((seconds * 1e9).round() as i64)
}

impl EEGRecording {
    /// `data` is channel-major: `channel_names.len()` runs of `n_samples`.
    pub fn new(
        patient_id: impl Into<String>,
        sampling_rate_hz: f64,
        start_time: DateTime<Utc>,
        channel_names: Vec<String>,
        seizure_onsets: Vec<DateTime<Utc>>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if !(sampling_rate_hz > 0.0) || !sampling_rate_hz.is_finite() {
            return Err(Error::Validation(format!("sampling rate must be positive, got {sampling_rate_hz}")));
        }
        if channel_names.is_empty() || !data.len().is_multiple_of(channel_names.len()) {
            return Err(Error::Validation(format!(
                "{} samples do not divide into {} channels",
                data.len(),
                channel_names.len()
            )));
        }
        let n_samples = data.len() / channel_names.len();
        let rec = Self {
            patient_id: patient_id.into(),
            sampling_rate_hz,
            start_time,
            channel_names,
            seizure_onsets,
            n_samples,
            data,
        };
        if rec.seizure_onsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("seizure onsets must be strictly increasing".into()));
        }
        if rec
            .seizure_onsets
            .iter()
            .any(|&t| t < rec.start_time || t > rec.end_time())
        {
            return Err(Error::Validation("seizure onset outside the recording".into()));
        }
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn duration_sec(&self) -> f64 {
        self.n_samples as f64 / self.sampling_rate_hz
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.start_time + seconds(self.duration_sec())
    }

    pub fn time_of_sample(&self, index: usize) -> DateTime<Utc> {
        self.start_time + seconds(index as f64 / self.sampling_rate_hz)
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    /// `len` samples of every channel starting at `start`.
    pub fn segment(&self, start: usize, len: usize) -> Vec<&[f32]> {
        (0..self.n_channels())
            .map(|c| &self.channel(c)[start..start + len])
            .collect()
    }

    fn metadata(&self, data_file: String) -> RecordingMeta {
        RecordingMeta {
            format_version: RECORDING_FORMAT_VERSION,
            patient_id: self.patient_id.clone(),
            start_time: self.start_time,
            sampling_rate_hz: self.sampling_rate_hz,
            channel_names: self.channel_names.clone(),
            seizure_onsets: self.seizure_onsets.clone(),
            n_samples: self.n_samples,
            data_file,
        }
    }

    /// Writes `<dir>/<stem>.json` and `<dir>/<stem>.f32`; returns the JSON path.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let data_name = format!("{stem}.f32");
        let mut raw = Vec::with_capacity(self.data.len() * 4);
        for i in 0..self.n_samples {
            for c in 0..self.n_channels() {
                raw.extend_from_slice(&self.data[c * self.n_samples + i].to_le_bytes());
            }
        }
        write_atomic(&dir.join(&data_name), &raw)?;
        let meta_path = dir.join(format!("{stem}.json"));
        let mut json = serde_json::to_vec_pretty(&self.metadata(data_name))?;
        json.push(b'\n');
        write_atomic(&meta_path, &json)?;
        Ok(meta_path)
    }

    pub fn read(meta_path: &Path) -> Result<Self> {
        let meta: RecordingMeta = serde_json::from_slice(&fs::read(meta_path)?)?;
        if meta.format_version != RECORDING_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported recording format version {}",
                meta_path.display(),
                meta.format_version
            )));
        }
        let dir = meta_path.parent().unwrap_or(Path::new("."));
        let raw = fs::read(dir.join(&meta.data_file))?;
        let n_ch = meta.channel_names.len();
        if n_ch == 0 || raw.len() != meta.n_samples * n_ch * 4 {
            return Err(Error::Format(format!(
                "{}: expected {} bytes of samples, found {}",
                meta.data_file,
                meta.n_samples * n_ch * 4,
                raw.len()
            )));
        }
        let mut data = vec![0f32; meta.n_samples * n_ch];
        for (k, b) in raw.chunks_exact(4).enumerate() {
            let (i, c) = (k / n_ch, k % n_ch);
            data[c * meta.n_samples + i] = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
        }
        Self::new(
            meta.patient_id,
            meta.sampling_rate_hz,
            meta.start_time,
            meta.channel_names,
            meta.seizure_onsets,
            data,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub format_version: u32,
    pub patient_id: String,
    pub start_time: DateTime<Utc>,
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub seizure_onsets: Vec<DateTime<Utc>>,
    pub n_samples: usize,
    pub data_file: String,
}

impl RecordingMeta {
    pub fn read(meta_path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(meta_path)?)?)
    }
}
