//! Per-(channel, band) standardization of spectrogram features.

use serde::{Deserialize, Serialize};
use seizure_tensor::Tensor;

use crate::error::{Error, Result};

/// Metadata key under which checkpoints carry their scaler.
pub const METADATA_KEY: &str = "feature_scaler";

/// Mean and standard deviation of every (channel, band) row, pooled over
/// frames and training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub shape: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Fits on `[C, B, T]` feature tensors. Rows with no spread get std 1.
    pub fn fit(inputs: &[&Tensor]) -> Result<Self> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Validation("cannot fit a feature scaler on no windows".into()))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Contract(format!("expected [channels, bands, frames] features, got {shape:?}")));
        }
        let rows = shape[0] * shape[1];
        let frames = shape[2];
        let mut sum = vec![0.0; rows];
        let mut sq = vec![0.0; rows];
        for x in inputs {
            if x.shape() != shape.as_slice() {
                return Err(Error::Contract(format!("feature shape {:?} differs from {shape:?}", x.shape())));
            }
            for (r, row) in x.data().chunks_exact(frames).enumerate() {
                sum[r] += row.iter().sum::<f64>();
                sq[r] += row.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let n = (inputs.len() * frames) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let v = (q / n - m * m).max(0.0).sqrt();
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { shape, mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.shape.as_slice() {
            return Err(Error::Contract(format!(
                "feature shape {:?} does not match the scaler's {:?}",
                x.shape(),
                self.shape
            )));
        }
        let frames = self.shape[2];
        let data = x
            .data()
            .chunks_exact(frames)
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |v| (v - self.mean[r]) / self.std[r]))
            .collect();
        Ok(Tensor::new(self.shape.clone(), data)?)
    }

    pub fn apply_all(&self, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
        inputs.iter().map(|x| self.apply(x)).collect()
    }

    /// The scaler stored in checkpoint metadata, if any.
    pub fn from_metadata(metadata: &serde_json::Value) -> Result<Option<Self>> {
        match metadata.get(METADATA_KEY) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(v) => Ok(Some(serde_json::from_value(v.clone())?)),
        }
    }
}
