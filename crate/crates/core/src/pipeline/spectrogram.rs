//! Short-time Fourier transform features.
//!
//! Layout of a feature tensor: `[channel, band, frame]`. Bands are the
//! one-sided FFT bins with centre frequency in `[f_min, f_max]` (clipped to
//! Nyquist), optionally averaged in groups of `freq_pool`; frames are
//! averaged in groups of `time_pool`. Incomplete trailing groups are
//! dropped. Values are `ln(1 + |X|)`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use seizure_tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    /// FFT segment length in seconds.
    pub segment_sec: f64,
    pub hop_sec: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub freq_pool: usize,
    pub time_pool: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            segment_sec: 1.0,
            hop_sec: 0.5,
            f_min: 0.5,
            f_max: 64.0,
            freq_pool: 8,
            time_pool: 7,
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT with a planned FFT.
#[derive(Clone)]
pub struct Stft {
    nfft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("nfft", &self.nfft).field("hop", &self.hop).finish()
    }
}

impl Stft {
    pub fn new(nfft: usize, hop: usize) -> Result<Self> {
        if nfft < 2 || hop == 0 {
            return Err(Error::Config(format!("invalid STFT size nfft={nfft} hop={hop}")));
        }
        Ok(Self {
            nfft,
            hop,
            window: hann(nfft),
            fft: FftPlanner::new().plan_fft_forward(nfft),
        })
    }

    pub fn frames(&self, n: usize) -> usize {
        if n < self.nfft {
            0
        } else {
            (n - self.nfft) / self.hop + 1
        }
    }

    /// One-sided spectra (`nfft/2 + 1` bins) of every full frame.
    pub fn transform<T: Copy + Into<f64>>(&self, signal: &[T]) -> Result<Vec<Vec<Complex<f64>>>> {
        if signal.len() < self.nfft {
            return Err(Error::Contract(format!(
                "signal of {} samples is shorter than the FFT size {}",
                signal.len(),
                self.nfft
            )));
        }
        let bins = self.nfft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        Ok((0..self.frames(signal.len()))
            .map(|m| {
                let frame = &signal[m * self.hop..m * self.hop + self.nfft];
                for ((b, &x), w) in buf.iter_mut().zip(frame).zip(&self.window) {
                    *b = Complex::new(x.into() * w, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..bins].to_vec()
            })
            .collect())
    }
}

/// Feature extractor for fixed-length multichannel windows.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub cfg: SpectrogramConfig,
    pub fs: f64,
    stft: Stft,
    bins: Vec<usize>,
}

impl Spectrogram {
    pub fn new(cfg: SpectrogramConfig, fs: f64) -> Result<Self> {
        if cfg.freq_pool == 0 || cfg.time_pool == 0 {
            return Err(Error::Config("pooling factors must be at least 1".into()));
        }
        let nfft = (cfg.segment_sec * fs).round() as usize;
        let hop = (cfg.hop_sec * fs).round() as usize;
        let stft = Stft::new(nfft, hop)?;
        let f_max = cfg.f_max.min(fs / 2.0);
        let bins: Vec<usize> = (0..=nfft / 2)
            .filter(|&k| {
                let f = k as f64 * fs / nfft as f64;
                f >= cfg.f_min && f <= f_max
            })
            .collect();
        if bins.len() < cfg.freq_pool {
            return Err(Error::Config(format!(
                "only {} bins in [{}, {f_max}] Hz for freq_pool {}",
                bins.len(),
                cfg.f_min,
                cfg.freq_pool
            )));
        }
        Ok(Self { cfg, fs, stft, bins })
    }

    /// Centre frequencies of the retained bins before pooling.
    pub fn bin_frequencies(&self) -> Vec<f64> {
        self.bins
            .iter()
            .map(|&k| k as f64 * self.fs / self.stft.nfft as f64)
            .collect()
    }

    /// `[bands, frames]` of the output for a window of `n` samples.
    pub fn output_dims(&self, n: usize) -> (usize, usize) {
        (self.bins.len() / self.cfg.freq_pool, self.stft.frames(n) / self.cfg.time_pool)
    }

    /// Feature tensor `[channels, bands, frames]` of one window.
    pub fn compute(&self, channels: &[&[f32]]) -> Result<Tensor> {
        let n = channels.first().map_or(0, |c| c.len());
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Contract("channels differ in length".into()));
        }
        let (bands, frames) = self.output_dims(n);
        if frames == 0 {
            return Err(Error::Contract(format!(
                "window of {n} samples yields no frames (nfft {}, time_pool {})",
                self.stft.nfft, self.cfg.time_pool
            )));
        }
        let (fp, tp) = (self.cfg.freq_pool, self.cfg.time_pool);
        let norm = 1.0 / (fp * tp) as f64;
        let mut out = Vec::with_capacity(channels.len() * bands * frames);
        for ch in channels {
            let spec = self.stft.transform(ch)?;
            let logmag: Vec<Vec<f64>> = spec
                .iter()
                .map(|frame| self.bins.iter().map(|&k| frame[k].norm().ln_1p()).collect())
                .collect();
            for b in 0..bands {
                for f in 0..frames {
                    let mut acc = 0.0;
                    for frame in &logmag[f * tp..(f + 1) * tp] {
                        acc += frame[b * fp..(b + 1) * fp].iter().sum::<f64>();
                    }
                    out.push(acc * norm);
                }
            }
        }
        Ok(Tensor::new(vec![channels.len(), bands, frames], out)?)
    }
}

/// Features of one window with default settings.
pub fn spectrogram(channels: &[&[f32]], fs: f64, cfg: &SpectrogramConfig) -> Result<Tensor> {
    Spectrogram::new(*cfg, fs)?.compute(channels)
}
