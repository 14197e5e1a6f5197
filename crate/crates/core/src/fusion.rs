//! Event-time priors and Bayes-rule fusion.
//!
//! Seizure onset times are summarized by Gaussian kernel density estimates
//! over two periodic variables: time-of-day (hours, period 24) and
//! day-of-week (days, period 7). Assuming the EEG `x` and the event times
//! `d1`, `d2` are independent, the fused posterior is
//!
//! ```text
//! p(z | x, d1, d2) = p(d1|z) p(d2|z) p(z|x) / (p(d1) p(d2))
//! ```
//!
//! with uniform marginals `p(d1) = 1/24`, `p(d2) = 1/7`. The scalar
//! `p(d1|z) p(d2|z) / (p(d1) p(d2))` is the [`FusionFactor`]; it is applied
//! to the preictal unit of the last dense layer before softmax.

use std::path::Path;

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};
use seizure_tensor::{Tape, Tensor, Var};
use statrs::function::erf::erf;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

/// Points in the tabulated density of a prior export.
pub const EXPORT_GRID_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventVariable {
    TimeOfDay,
    DayOfWeek,
}

impl EventVariable {
    pub fn period(self) -> f64 {
        match self {
            EventVariable::TimeOfDay => 24.0,
            EventVariable::DayOfWeek => 7.0,
        }
    }

    /// Density of the uniform marginal, `1/period`.
    pub fn uniform_base(self) -> f64 {
        1.0 / self.period()
    }

    pub fn of(self, sample: &EventTimeSample) -> f64 {
        match self {
            EventVariable::TimeOfDay => sample.tod_hours,
            EventVariable::DayOfWeek => sample.dow_days,
        }
    }
}

/// Time-of-day and day-of-week of one instant, in UTC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventTimeSample {
    /// Hours since midnight, in `[0, 24)`.
    pub tod_hours: f64,
    /// Days since Monday 00:00 including the fractional day, in `[0, 7)`.
    pub dow_days: f64,
}

impl EventTimeSample {
    pub fn from_timestamp(t: DateTime<Utc>) -> Self {
        let secs = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9;
        let tod_hours = (secs / 3600.0).min(24.0f64.next_down());
        let dow_days = (t.weekday().num_days_from_monday() as f64 + tod_hours / 24.0).min(7.0f64.next_down());
        Self { tod_hours, dow_days }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeMode {
    /// Kernels replicated at `-period, 0, +period` so mass leaking past one
    /// boundary re-enters at the other.
    Circular,
    /// Plain Gaussian KDE truncated to `[0, period)`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Uniform,
    Kde(KdeMode),
}

/// Normalized density over one periodic event-time variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDensity {
    pub variable: EventVariable,
    pub period: f64,
    pub samples: Vec<f64>,
    pub bandwidth: f64,
    pub uniform_base: f64,
    pub kind: DensityKind,
    norm: f64,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

impl PriorDensity {
    /// The uniform density `1/period`; fusion with it is exactly neutral.
    pub fn uniform(variable: EventVariable) -> Self {
        Self {
            variable,
            period: variable.period(),
            samples: Vec::new(),
            bandwidth: f64::INFINITY,
            uniform_base: variable.uniform_base(),
            kind: DensityKind::Uniform,
            norm: 1.0,
        }
    }

    fn offsets(&self) -> &'static [f64] {
        match self.kind {
            DensityKind::Kde(KdeMode::Circular) => &[-1.0, 0.0, 1.0],
            _ => &[0.0],
        }
    }

    fn with_samples(variable: EventVariable, samples: Vec<f64>, bandwidth: f64, mode: KdeMode) -> Self {
        let mut d = Self {
            variable,
            period: variable.period(),
            samples,
            bandwidth,
            uniform_base: variable.uniform_base(),
            kind: DensityKind::Kde(mode),
            norm: 1.0,
        };
        // mass of the (replicated) kernels that falls inside [0, period)
        let p = d.period;
        let h = d.bandwidth;
        let mass: f64 = d
            .samples
            .iter()
            .flat_map(|&s| d.offsets().iter().map(move |&o| s + o * p))
            .map(|c| std_normal_cdf((p - c) / h) - std_normal_cdf(-c / h))
            .sum();
        d.norm = mass / d.samples.len() as f64;
        d
    }

    /// Density at `t` (wrapped into `[0, period)`); never exactly zero.
    pub fn evaluate(&self, t: f64) -> f64 {
        if self.kind == DensityKind::Uniform {
            return self.uniform_base;
        }
        let t = t.rem_euclid(self.period);
        let h = self.bandwidth;
        let c = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        let raw: f64 = self
            .samples
            .iter()
            .flat_map(|&s| self.offsets().iter().map(move |&o| s + o * self.period))
            .map(|center| {
                let z = (t - center) / h;
                c * (-0.5 * z * z).exp()
            })
            .sum();
        (raw / (self.samples.len() as f64 * self.norm)).max(f64::MIN_POSITIVE)
    }

    /// `EXPORT_GRID_POINTS` evenly spaced `(t, density)` pairs over the period.
    pub fn tabulate(&self, points: usize) -> Vec<(f64, f64)> {
        (0..points)
            .map(|k| {
                let t = k as f64 * self.period / points as f64;
                (t, self.evaluate(t))
            })
            .collect()
    }

    pub fn to_export(&self) -> PriorExport {
        let table = self.tabulate(EXPORT_GRID_POINTS);
        PriorExport {
            variable: self.variable,
            period: self.period,
            kind: self.kind,
            bandwidth: self.bandwidth.is_finite().then_some(self.bandwidth),
            uniform_base: self.uniform_base,
            samples: self.samples.clone(),
            grid: table.iter().map(|p| p.0).collect(),
            density: table.iter().map(|p| p.1).collect(),
        }
    }

    /// Rebuilds the density from an export; the table is not trusted.
    pub fn from_export(e: &PriorExport) -> Result<Self> {
        match e.kind {
            DensityKind::Uniform => Ok(Self::uniform(e.variable)),
            DensityKind::Kde(mode) => {
                let h = e
                    .bandwidth
                    .ok_or_else(|| Error::Format("KDE prior export without bandwidth".into()))?;
                if e.samples.is_empty() || !(h > 0.0) {
                    return Err(Error::Format("KDE prior export needs samples and a positive bandwidth".into()));
                }
                Ok(Self::with_samples(e.variable, e.samples.clone(), h, mode))
            }
        }
    }
}

/// File form of [`EventPriors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPriorsExport {
    pub tod: PriorExport,
    pub dow: PriorExport,
}

/// JSON form of a [`PriorDensity`] with a tabulated curve for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorExport {
    pub variable: EventVariable,
    pub period: f64,
    pub kind: DensityKind,
    pub bandwidth: Option<f64>,
    pub uniform_base: f64,
    pub samples: Vec<f64>,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Scott's rule `n^(-1/5) * sample std` (n-1 denominator); `None` when the
/// spread is zero or undefined.
pub fn scott_bandwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let h = (n as f64).powf(-0.2) * var.sqrt();
    (h > 0.0 && h.is_finite()).then_some(h)
}

/// Circular Gaussian KDE; see [`fit_kde_with`].
pub fn fit_kde(samples: &[EventTimeSample], variable: EventVariable, bandwidth: Option<f64>) -> Result<PriorDensity> {
    fit_kde_with(samples, variable, bandwidth, KdeMode::Circular)
}

/// Fits a Gaussian KDE over `variable`. Without an explicit bandwidth,
/// Scott's rule is used; zero spread falls back to `period / 20`.
pub fn fit_kde_with(
    samples: &[EventTimeSample],
    variable: EventVariable,
    bandwidth: Option<f64>,
    mode: KdeMode,
) -> Result<PriorDensity> {
    if samples.is_empty() {
        return Err(Error::Fit(format!("no samples to fit the {variable:?} prior")));
    }
    let values: Vec<f64> = samples.iter().map(|s| variable.of(s)).collect();
    let period = variable.period();
    if values.iter().any(|v| !(0.0..period).contains(v)) {
        return Err(Error::Fit(format!("{variable:?} sample outside [0, {period})")));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Fit(format!("bandwidth must be positive, got {h}"))),
        None => scott_bandwidth(&values).unwrap_or_else(|| {
            log::warn!("{variable:?} samples have zero spread; using bandwidth period/20");
            period / 20.0
        }),
    };
    Ok(PriorDensity::with_samples(variable, values, h, mode))
}

/// `p(d1|z') p(d2|z') / (p(d1) p(d2))`; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionFactor {
    pub value: f64,
}

impl FusionFactor {
    pub const NEUTRAL: FusionFactor = FusionFactor { value: 1.0 };
}

/// Fusion factor at absolute time `t` from a time-of-day and a day-of-week
/// density. Pass [`PriorDensity::uniform`] to drop either term.
pub fn fusion_factor(tod: &PriorDensity, dow: &PriorDensity, t: DateTime<Utc>) -> Result<FusionFactor> {
    if tod.variable != EventVariable::TimeOfDay || dow.variable != EventVariable::DayOfWeek {
        return Err(Error::Contract(format!(
            "fusion_factor needs (time_of_day, day_of_week) densities, got ({:?}, {:?})",
            tod.variable, dow.variable
        )));
    }
    let s = EventTimeSample::from_timestamp(t);
    let value = factor_from_densities(tod.evaluate(s.tod_hours), dow.evaluate(s.dow_days));
    Ok(FusionFactor { value })
}

/// `(tod_density / (1/24)) * (dow_density / (1/7))`.
pub fn factor_from_densities(tod_density: f64, dow_density: f64) -> f64 {
    (tod_density / EventVariable::TimeOfDay.uniform_base()) * (dow_density / EventVariable::DayOfWeek.uniform_base())
}

/// How the factor acts on the pre-softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Multiply the preictal logit by the factor (literal reading).
    #[default]
    LogitScale,
    /// Add `ln(factor)` to the preictal logit, i.e. scale the preictal
    /// unnormalized probability.
    ProbabilityScale,
}

/// Which event-time priors an arm uses, and when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FusionSpec {
    pub tod: bool,
    pub dow: bool,
    pub mode: FusionMode,
    /// Also apply the factor while training (default); `false` is the
    /// inference-only ablation.
    #[serde(default = "default_true")]
    pub at_training: bool,
}

fn default_true() -> bool {
    true
}

impl FusionSpec {
    pub const NONE: FusionSpec = FusionSpec {
        tod: false,
        dow: false,
        mode: FusionMode::LogitScale,
        at_training: true,
    };

    pub fn is_active(&self) -> bool {
        self.tod || self.dow
    }
}

/// The fitted time-of-day and day-of-week priors.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPriors {
    pub tod: PriorDensity,
    pub dow: PriorDensity,
}

impl EventPriors {
    pub fn uniform() -> Self {
        Self {
            tod: PriorDensity::uniform(EventVariable::TimeOfDay),
            dow: PriorDensity::uniform(EventVariable::DayOfWeek),
        }
    }

    /// Fits both priors on onset timestamps with default bandwidths.
    pub fn fit(onsets: &[DateTime<Utc>], mode: KdeMode) -> Result<Self> {
        let samples: Vec<EventTimeSample> = onsets.iter().map(|&t| EventTimeSample::from_timestamp(t)).collect();
        Ok(Self {
            tod: fit_kde_with(&samples, EventVariable::TimeOfDay, None, mode)?,
            dow: fit_kde_with(&samples, EventVariable::DayOfWeek, None, mode)?,
        })
    }

    pub fn to_export(&self) -> EventPriorsExport {
        EventPriorsExport {
            tod: self.tod.to_export(),
            dow: self.dow.to_export(),
        }
    }

    pub fn from_export(e: &EventPriorsExport) -> Result<Self> {
        let tod = PriorDensity::from_export(&e.tod)?;
        let dow = PriorDensity::from_export(&e.dow)?;
        if tod.variable != EventVariable::TimeOfDay || dow.variable != EventVariable::DayOfWeek {
            return Err(Error::Format("prior file has the time-of-day and day-of-week entries swapped".into()));
        }
        Ok(Self { tod, dow })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(&self.to_export())?;
        json.push(b'\n');
        write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_export(&serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Factor for an arm; inactive terms use the uniform density.
    pub fn factor(&self, spec: &FusionSpec, t: DateTime<Utc>) -> Result<FusionFactor> {
        if !spec.is_active() {
            return Ok(FusionFactor::NEUTRAL);
        }
        let uniform_tod = PriorDensity::uniform(EventVariable::TimeOfDay);
        let uniform_dow = PriorDensity::uniform(EventVariable::DayOfWeek);
        let tod = if spec.tod { &self.tod } else { &uniform_tod };
        let dow = if spec.dow { &self.dow } else { &uniform_dow };
        fusion_factor(tod, dow, t)
    }
}

/// Applies the factor to a 2-unit pre-softmax output `[interictal, preictal]`.
pub fn apply_fusion(pre_softmax: &Tensor, factor: FusionFactor, mode: FusionMode) -> Result<Tensor> {
    if pre_softmax.shape() != [2] {
        return Err(Error::Contract(format!(
            "apply_fusion expects a [2] output, got {:?}",
            pre_softmax.shape()
        )));
    }
    check_factor(factor.value)?;
    let d = pre_softmax.data();
    let fused = match mode {
        FusionMode::LogitScale => d[1] * factor.value,
        FusionMode::ProbabilityScale => d[1] + factor.value.ln(),
    };
    Ok(Tensor::new(vec![2], vec![d[0], fused])?)
}

fn check_factor(f: f64) -> Result<()> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::Contract(format!("fusion factor must be positive and finite, got {f}")));
    }
    Ok(())
}

/// Batched, differentiable form of [`apply_fusion`] over `[N, 2]` logits.
pub fn apply_fusion_on_tape(tape: &mut Tape, logits: Var, factors: &[f64], mode: FusionMode) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    if shape.len() != 2 || shape[1] != 2 || shape[0] != factors.len() {
        return Err(Error::Contract(format!(
            "fusion: {} factors for logits {shape:?}",
            factors.len()
        )));
    }
    for &f in factors {
        check_factor(f)?;
    }
    match mode {
        FusionMode::LogitScale => {
            let m = tape.constant(Tensor::new(shape, factors.iter().flat_map(|&f| [1.0, f]).collect())?);
            Ok(tape.mul(logits, m)?)
        }
        FusionMode::ProbabilityScale => {
            let a = tape.constant(Tensor::new(shape, factors.iter().flat_map(|&f| [0.0, f.ln()]).collect())?);
            Ok(tape.add(logits, a)?)
        }
    }
}

/// Posterior with extra independent evidence folded in at once:
/// `p(z|x) * prod_i p(d_i|z) / p(d_i)`.
pub fn fused_posterior(p_z_given_x: f64, likelihoods: &[f64], marginals: &[f64]) -> f64 {
    assert_eq!(likelihoods.len(), marginals.len());
    let num: f64 = likelihoods.iter().product();
    let den: f64 = marginals.iter().product();
    p_z_given_x * num / den
}
