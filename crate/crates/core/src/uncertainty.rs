//! Monte-Carlo output sampling and the uncertainty level.
//!
//! The uncertainty level of a prediction distribution is
//! `std / |mean - 0.5|`: it grows when the sampled scores are spread out
//! and when they sit near the decision boundary.

use std::io::Write;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use seizure_tensor::{kernels, Tensor};

use crate::error::{Error, Result};
use crate::fusion::{self, FusionMode};
use crate::network::BayesNet;
use crate::rng;

/// Draws per prediction unless configured otherwise.
pub const DEFAULT_DRAWS: usize = 500;
/// Exported uncertainty values are capped here.
pub const UNCERTAINTY_CLIP: f64 = 10.0;
/// Inputs per forward pass when sampling many windows at once.
const CHUNK: usize = 256;

/// Preictal scores from repeated stochastic forward passes of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// `+inf` when the mean is exactly 0.5.
    pub uncertainty: f64,
}

impl PredictionDistribution {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Contract(format!(
                "a prediction distribution needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let mean = if samples.iter().all(|&s| s == samples[0]) {
            samples[0]
        } else {
            samples.iter().sum::<f64>() / n
        };
        let std = (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
        Ok(Self {
            uncertainty: uncertainty_level(mean, std),
            samples,
            mean,
            std,
        })
    }

    pub fn uncertainty_clipped(&self) -> f64 {
        clip_uncertainty(self.uncertainty)
    }
}

/// `std / |mean - 0.5|`, or `+inf` at `mean == 0.5`.
pub fn uncertainty_level(mean: f64, std: f64) -> f64 {
    let margin = (mean - 0.5).abs();
    if margin == 0.0 {
        f64::INFINITY
    } else {
        std / margin
    }
}

pub fn clip_uncertainty(u: f64) -> f64 {
    u.min(UNCERTAINTY_CLIP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    ConfidentPositive,
    ConfidentNegative,
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionThresholds {
    pub score: f64,
    pub uncertainty: f64,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        Self {
            score: 0.5,
            uncertainty: 2.0,
        }
    }
}

/// Uncertain when the level reaches the threshold, otherwise positive iff
/// the mean is above the score threshold.
pub fn classify_distribution(dist: &PredictionDistribution, thresholds: DecisionThresholds) -> Decision {
    if dist.uncertainty >= thresholds.uncertainty {
        Decision::Uncertain
    } else if dist.mean > thresholds.score {
        Decision::ConfidentPositive
    } else {
        Decision::ConfidentNegative
    }
}

/// Monte-Carlo settings. Draw `k` always uses RNG stream `(root_seed, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub draws: usize,
    pub root_seed: u64,
    pub workers: usize,
}

impl SamplingConfig {
    pub fn new(draws: usize, root_seed: u64) -> Self {
        Self {
            draws,
            root_seed,
            workers: 1,
        }
    }
}

/// Optional per-input fusion applied before softmax.
#[derive(Debug, Clone, Copy)]
pub struct Fusion<'a> {
    pub factors: &'a [f64],
    pub mode: FusionMode,
}

fn preictal_scores(net: &BayesNet, inputs: &[&Tensor], fusion: Option<Fusion>, noise: Option<&mut rng::Rng>) -> Result<Vec<f64>> {
    let batch = net.stack(inputs)?;
    let mut logits = net.predict_logits(&batch, noise)?;
    if let Some(f) = fusion {
        let mut tape = seizure_tensor::Tape::new();
        let v = tape.constant(logits);
        let fused = fusion::apply_fusion_on_tape(&mut tape, v, f.factors, f.mode)?;
        logits = tape.value(fused).clone();
    }
    let mut out = Vec::with_capacity(inputs.len());
    for row in logits.data().chunks_exact(2) {
        let mut p = [0.0; 2];
        kernels::softmax_row(row, &mut p);
        out.push(p[1]);
    }
    Ok(out)
}

/// Scores of every input under one weight draw, in chunks of `CHUNK`.
fn scores_for_draw(net: &BayesNet, inputs: &[&Tensor], fusion: Option<Fusion>, root_seed: u64, k: usize) -> Result<Vec<f64>> {
    let mut all = Vec::with_capacity(inputs.len());
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        // every chunk replays the same weight sample
        let mut r = rng::stream(root_seed, k as u64);
        let f = fusion.map(|f| Fusion {
            factors: &f.factors[c * CHUNK..c * CHUNK + chunk.len()],
            mode: f.mode,
        });
        all.extend(preictal_scores(net, chunk, f, Some(&mut r))?);
    }
    Ok(all)
}

/// Deterministic (posterior-mean) preictal score of each input.
pub fn point_scores(net: &BayesNet, inputs: &[&Tensor], fusion: Option<Fusion>) -> Result<Vec<f64>> {
    let mut all = Vec::with_capacity(inputs.len());
    for (c, chunk) in inputs.chunks(CHUNK).enumerate() {
        let f = fusion.map(|f| Fusion {
            factors: &f.factors[c * CHUNK..c * CHUNK + chunk.len()],
            mode: f.mode,
        });
        all.extend(preictal_scores(net, chunk, f, None)?);
    }
    Ok(all)
}

/// Prediction distributions for many inputs. Each draw samples one set of
/// weights shared by all inputs; draws are spread over `cfg.workers`
/// threads and reduced in draw order.
pub fn sample_batch_predictions(
    net: &BayesNet,
    inputs: &[&Tensor],
    fusion: Option<Fusion>,
    cfg: &SamplingConfig,
) -> Result<Vec<PredictionDistribution>> {
    if cfg.draws < 2 {
        return Err(Error::Contract(format!("need at least 2 draws, got {}", cfg.draws)));
    }
    if let Some(f) = fusion {
        if f.factors.len() != inputs.len() {
            return Err(Error::Contract(format!(
                "{} fusion factors for {} inputs",
                f.factors.len(),
                inputs.len()
            )));
        }
    }
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    if net.deterministic {
        // every draw is the posterior-mean pass
        let scores = point_scores(net, inputs, fusion)?;
        return scores
            .into_iter()
            .map(|s| PredictionDistribution::from_samples(vec![s; cfg.draws]))
            .collect();
    }
    let workers = cfg.workers.clamp(1, cfg.draws);
    let per = cfg.draws.div_ceil(workers);
    let mut by_draw: Vec<Vec<f64>> = Vec::with_capacity(cfg.draws);
    std::thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let range = (w * per)..((w + 1) * per).min(cfg.draws);
                s.spawn(move || {
                    range
                        .map(|k| scores_for_draw(net, inputs, fusion, cfg.root_seed, k))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            by_draw.extend(h.join().expect("sampling worker panicked")?);
        }
        Ok(())
    })?;
    (0..inputs.len())
        .map(|i| PredictionDistribution::from_samples(by_draw.iter().map(|d| d[i]).collect()))
        .collect()
}

/// `cfg.draws` stochastic forward passes of a single input.
pub fn sample_predictions(net: &BayesNet, input: &Tensor, cfg: &SamplingConfig) -> Result<PredictionDistribution> {
    Ok(sample_batch_predictions(net, &[input], None, cfg)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub timestamp: DateTime<Utc>,
    pub score_mean: f64,
    pub score_std: f64,
    pub uncertainty: f64,
    pub uncertainty_clipped: f64,
    pub fused: bool,
}

impl TimelinePoint {
    pub fn new(timestamp: DateTime<Utc>, dist: &PredictionDistribution, fused: bool) -> Self {
        Self {
            timestamp,
            score_mean: dist.mean,
            score_std: dist.std,
            uncertainty: dist.uncertainty,
            uncertainty_clipped: dist.uncertainty_clipped(),
            fused,
        }
    }
}

pub const TIMELINE_HEADER: &str = "timestamp,score_mean,score_std,uncertainty,uncertainty_clipped,fused";

pub fn iso_utc(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn write_timeline_csv<W: Write>(mut w: W, points: &[TimelinePoint]) -> Result<()> {
    writeln!(w, "{TIMELINE_HEADER}")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            iso_utc(p.timestamp),
            p.score_mean,
            p.score_std,
            p.uncertainty,
            p.uncertainty_clipped,
            p.fused
        )?;
    }
    Ok(())
}
