//! Synthetic multichannel EEG with planted preictal structure.
//!
//! Background activity is pink noise with a per-channel gain. Before every
//! leading seizure a theta-band (default 4-8 Hz) rhythm fades in linearly
//! over `signature_lead_min` minutes; its peak amplitude is
//! `separability * noise_amplitude`. Each onset is followed by one minute of
//! 3 Hz ictal rhythm. Leading onsets cluster around `tod_center_hour`
//! (wrapped normal), recordings start at `start_hour` on a random day of a
//! year, and some seizures get a follow-up seizure that merges into the
//! same cluster.

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::recording::{seconds, EEGRecording, STANDARD_CHANNELS};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const FOLLOW_UP_MIN: (f64, f64) = (5.0, 25.0);
const MERGE_MIN: f64 = 30.0;
const ICTAL_SEC: f64 = 60.0;
const ICTAL_HZ: f64 = 3.0;
const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub hours_per_patient: f64,
    pub sampling_rate_hz: f64,
    pub n_channels: usize,
    /// Leading seizures per 24 h (rounded per patient).
    pub seizures_per_day: f64,
    pub tod_center_hour: f64,
    /// Standard deviation of the onset time-of-day, in hours.
    pub tod_spread_hours: f64,
    /// UTC hour at which every recording starts.
    pub start_hour: f64,
    pub min_leading_gap_min: f64,
    /// Probability that a leading seizure is followed by a clustered one.
    pub cluster_prob: f64,
    /// Peak preictal rhythm amplitude relative to the background.
    pub separability: f64,
    pub signature_lead_min: f64,
    pub signature_band_hz: (f64, f64),
    pub noise_amplitude: f64,
    /// No onset earlier than this after the recording start.
    pub first_onset_margin_min: f64,
    /// Onsets fall on multiples of this offset from the recording start.
    pub onset_grid_sec: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 10,
            hours_per_patient: 24.0,
            sampling_rate_hz: 128.0,
            n_channels: 19,
            seizures_per_day: 3.0,
            tod_center_hour: 8.0,
            tod_spread_hours: 1.5,
            start_hour: 20.0,
            min_leading_gap_min: 90.0,
            cluster_prob: 0.2,
            separability: 0.5,
            signature_lead_min: 40.0,
            signature_band_hz: (4.0, 8.0),
            noise_amplitude: 20.0,
            first_onset_margin_min: 40.0,
            onset_grid_sec: 15.0,
            seed: 0,
        }
    }
}

/// Planned seizure times of one synthetic patient.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetPlan {
    pub patient_id: String,
    pub start_time: DateTime<Utc>,
    pub leading: Vec<DateTime<Utc>>,
    pub all: Vec<DateTime<Utc>>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hours_per_patient", self.hours_per_patient),
            ("sampling_rate_hz", self.sampling_rate_hz),
            ("noise_amplitude", self.noise_amplitude),
            ("signature_lead_min", self.signature_lead_min),
            ("onset_grid_sec", self.onset_grid_sec),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Generation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_patients == 0 || self.n_channels == 0 {
            return Err(Error::Generation("need at least one patient and one channel".into()));
        }
        if !(0.0..=1.0).contains(&self.cluster_prob) || !(self.separability >= 0.0) || !(self.tod_spread_hours >= 0.0) {
            return Err(Error::Generation("cluster_prob, separability or tod_spread_hours out of range".into()));
        }
        if !(self.seizures_per_day >= 0.0) {
            return Err(Error::Generation("seizures_per_day must be non-negative".into()));
        }
        let (lo, hi) = self.signature_band_hz;
        if !(lo > 0.0 && hi >= lo && hi < self.sampling_rate_hz / 2.0) {
            return Err(Error::Generation(format!("signature band ({lo}, {hi}) Hz is not below Nyquist")));
        }
        if self.min_leading_gap_min <= FOLLOW_UP_MIN.1 + MERGE_MIN {
            return Err(Error::Generation(format!(
                "leading seizures {} min apart would merge with follow-ups; need more than {} min",
                self.min_leading_gap_min,
                FOLLOW_UP_MIN.1 + MERGE_MIN
            )));
        }
        let n = self.leading_per_patient();
        let room = self.hours_per_patient * 60.0 - self.first_onset_margin_min;
        if n > 0 && (n - 1) as f64 * self.min_leading_gap_min > room {
            return Err(Error::Generation(format!(
                "{n} leading seizures {} min apart do not fit in {} h",
                self.min_leading_gap_min, self.hours_per_patient
            )));
        }
        Ok(())
    }

    pub fn leading_per_patient(&self) -> usize {
        (self.seizures_per_day * self.hours_per_patient / 24.0).round() as usize
    }

    pub fn n_samples(&self) -> usize {
        (self.hours_per_patient * 3600.0 * self.sampling_rate_hz).round() as usize
    }

    fn patient_seed(&self, index: usize) -> u64 {
        rng::derive_seed(self.seed, index as u64)
    }

    /// Onset times of patient `index` without generating any signal.
    pub fn plan_onsets(&self, index: usize) -> Result<OnsetPlan> {
        self.validate()?;
        let mut r = rng::stream(self.patient_seed(index), 0);
        let day = r.gen_range(0..364);
        let base = NaiveDate::from_ymd_opt(2024, 1, 1)
            .expect("valid date")
            .and_hms_opt(0, 0, 0)
            .expect("valid time")
            .and_utc();
        let start_time = base + Duration::days(day) + seconds(self.start_hour * 3600.0);
        let duration_min = self.hours_per_patient * 60.0;
        let grid = self.onset_grid_sec / 60.0;
        let spread = Normal::new(0.0, self.tod_spread_hours.max(0.0)).expect("finite spread");
        let whole_days = (self.hours_per_patient / 24.0).floor().max(1.0) as i64;

        let n = self.leading_per_patient();
        let mut leading_min: Vec<f64> = Vec::with_capacity(n);
        let mut attempts = 0;
        while leading_min.len() < n {
            attempts += 1;
            if attempts > PLACEMENT_ATTEMPTS * n.max(1) {
                return Err(Error::Generation(format!(
                    "could not place {n} seizures {} min apart for patient {index}",
                    self.min_leading_gap_min
                )));
            }
            let tod = (self.tod_center_hour + spread.sample(&mut r)).rem_euclid(24.0);
            let day_offset = r.gen_range(0..whole_days) as f64 * 24.0;
            let offset_h = (tod - self.start_hour).rem_euclid(24.0) + day_offset;
            let m = ((offset_h * 60.0) / grid).round() * grid;
            if m < self.first_onset_margin_min || m > duration_min {
                continue;
            }
            if leading_min.iter().any(|&o| (o - m).abs() < self.min_leading_gap_min) {
                continue;
            }
            leading_min.push(m);
        }
        leading_min.sort_by(f64::total_cmp);

        let mut all_min = Vec::with_capacity(2 * n);
        for &m in &leading_min {
            all_min.push(m);
            if r.gen::<f64>() < self.cluster_prob {
                let f = m + ((r.gen_range(FOLLOW_UP_MIN.0..FOLLOW_UP_MIN.1)) / grid).round() * grid;
                if f <= duration_min {
                    all_min.push(f);
                }
            }
        }
        let at = |m: &f64| start_time + seconds(m * 60.0);
        Ok(OnsetPlan {
            patient_id: format!("synth{:02}", index + 1),
            start_time,
            leading: leading_min.iter().map(at).collect(),
            all: all_min.iter().map(at).collect(),
        })
    }

    /// Generates patient `index`. Each channel draws from its own RNG stream.
    pub fn synthesize_patient(&self, index: usize) -> Result<EEGRecording> {
        let plan = self.plan_onsets(index)?;
        let fs = self.sampling_rate_hz;
        let n = self.n_samples();
        let seed = self.patient_seed(index);
        let mut data = vec![0f32; n * self.n_channels];
        for (c, out) in data.chunks_exact_mut(n).enumerate() {
            let mut r = rng::stream(seed, c as u64 + 1);
            let gain = self.noise_amplitude * r.gen_range(0.8..1.2);
            let mut pink = PinkNoise::default();
            for v in out.iter_mut() {
                *v = (gain * pink.next(&mut r)) as f32;
            }
            let amp = self.separability * gain;
            for &onset in &plan.leading {
                let end = ((onset - plan.start_time).num_milliseconds() as f64 / 1000.0 * fs).round() as i64;
                let lead = (self.signature_lead_min * 60.0 * fs).round() as i64;
                let begin = (end - lead).max(0);
                let tones: Vec<(f64, f64)> = (0..3)
                    .map(|_| {
                        let f = r.gen_range(self.signature_band_hz.0..=self.signature_band_hz.1);
                        (f, r.gen_range(0.0..std::f64::consts::TAU))
                    })
                    .collect();
                for i in begin..end.min(n as i64) {
                    let ramp = (i - (end - lead)) as f64 / lead as f64;
                    let t = i as f64 / fs;
                    let s: f64 = tones
                        .iter()
                        .map(|&(f, ph)| (std::f64::consts::TAU * f * t + ph).sin())
                        .sum::<f64>()
                        / (tones.len() as f64).sqrt();
                    out[i as usize] += (amp * ramp * s) as f32;
                }
            }
            for &onset in &plan.all {
                let s0 = ((onset - plan.start_time).num_milliseconds() as f64 / 1000.0 * fs).round() as usize;
                let s1 = (s0 + (ICTAL_SEC * fs) as usize).min(n);
                for i in s0..s1 {
                    let t = (i - s0) as f64 / fs;
                    out[i] += (4.0 * gain * (std::f64::consts::TAU * ICTAL_HZ * t).sin()) as f32;
                }
            }
        }
        let names = (0..self.n_channels)
            .map(|c| {
                STANDARD_CHANNELS
                    .get(c)
                    .map_or_else(|| format!("ch{}", c + 1), |s| s.to_string())
            })
            .collect();
        EEGRecording::new(plan.patient_id, fs, plan.start_time, names, plan.all, data)
    }

    pub fn synthesize_dataset(&self) -> Result<Vec<EEGRecording>> {
        (0..self.n_patients).map(|i| self.synthesize_patient(i)).collect()
    }
}

/// Paul Kellet's refined pink-noise filter over Gaussian white noise,
/// scaled to roughly unit variance.
#[derive(Debug, Clone, Default)]
struct PinkNoise {
    b: [f64; 7],
}

impl PinkNoise {
    fn next(&mut self, r: &mut Rng) -> f64 {
        let w: f64 = r.sample(StandardNormal);
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        let out = b[0] + b[1] + b[2] + b[3] + b[4] + b[5] + b[6] + w * 0.5362;
        b[6] = w * 0.115926;
        out * 0.33
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::labeling::leading_seizures;

    #[test]
    fn plans_are_reproducible_and_feasible() {
        let spec = SyntheticSpec::default();
        for i in 0..spec.n_patients {
            let a = spec.plan_onsets(i).unwrap();
            assert_eq!(a, spec.plan_onsets(i).unwrap());
            assert_eq!(a.leading.len(), 3);
            assert_eq!(leading_seizures(&a.all, 30.0).unwrap(), a.leading);
        }
    }

    #[test]
    fn overcrowded_spec_is_generation_error() {
        let spec = SyntheticSpec {
            seizures_per_day: 40.0,
            ..Default::default()
        };
        assert!(matches!(spec.plan_onsets(0), Err(Error::Generation(_))));
        let spec = SyntheticSpec {
            min_leading_gap_min: 40.0,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(Error::Generation(_))));
    }

    #[test]
    fn small_patient_has_expected_shape() {
        let spec = SyntheticSpec {
            hours_per_patient: 2.0,
            seizures_per_day: 12.0,
            sampling_rate_hz: 64.0,
            n_channels: 2,
            start_hour: 7.0,
            ..Default::default()
        };
        let r = spec.synthesize_patient(0).unwrap();
        assert_eq!(r.n_channels(), 2);
        assert_eq!(r.n_samples(), 2 * 3600 * 64);
        assert_eq!(r.channel_names, vec!["Fp1", "Fp2"]);
        assert!(r.channel(0).iter().all(|v| v.is_finite()));
    }
}
