//! Sensor data model: raw six-channel IMU samples, per-subject recordings,
//! normalization and fixed-length windows.
//!
//! Raw samples are kept exactly as logged (accelerations in m/s² including
//! gravity, angular velocities in rad/s). Normalization is applied only when
//! windows are assembled, so recordings round-trip through the file formats
//! in [`io`] without loss.

pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of channels per sample: three accelerations, three angular velocities.
pub const CHANNELS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("non-finite channel value in sample at t={t}")]
    NonFinite { t: f64 },
    #[error("timestamps not strictly increasing at sample {index}")]
    NonMonotonic { index: usize },
    #[error("recording has no samples")]
    Empty,
    #[error("median sample gap {median_gap:.6}s is not within 10% of 1/{rate} Hz")]
    RateMismatch { median_gap: f64, rate: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("upsampling from {from} Hz to {to} Hz is not supported")]
    Upsampling { from: f64, to: f64 },
}

/// One reading of the inertial sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds on the recording clock.
    pub t: f64,
    /// Linear accelerations (x, y, z) in m/s².
    pub acc: [f32; 3],
    /// Roll, pitch and yaw angular velocities in rad/s.
    pub gyro: [f32; 3],
}

impl ImuSample {
    pub fn new(t: f64, acc: [f32; 3], gyro: [f32; 3]) -> Self {
        Self { t, acc, gyro }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.channels().iter().all(|v| v.is_finite())
    }

    pub fn channels(&self) -> [f32; CHANNELS] {
        [
            self.acc[0],
            self.acc[1],
            self.acc[2],
            self.gyro[0],
            self.gyro[1],
            self.gyro[2],
        ]
    }
}

/// Divisors mapping raw accelerations and angular velocities to roughly [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub acc: f32,
    pub gyro: f32,
}

impl Default for NormalizationConstants {
    fn default() -> Self {
        Self {
            acc: 10.0,
            gyro: 2.0,
        }
    }
}

impl NormalizationConstants {
    pub fn new(acc: f32, gyro: f32) -> Result<Self, DataError> {
        if !(acc > 0.0 && acc.is_finite() && gyro > 0.0 && gyro.is_finite()) {
            return Err(DataError::InvalidArgument(format!(
                "normalization constants must be positive, got c_a={acc}, c_g={gyro}"
            )));
        }
        Ok(Self { acc, gyro })
    }
}

/// Scales one sample into classifier units: accelerations by `c_a`, angular
/// velocities by `c_g`.
pub fn normalize(
    sample: &ImuSample,
    consts: &NormalizationConstants,
) -> Result<[f32; CHANNELS], DataError> {
    if !sample.is_finite() {
        return Err(DataError::NonFinite { t: sample.t });
    }
    let c = sample.channels();
    Ok([
        c[0] / consts.acc,
        c[1] / consts.acc,
        c[2] / consts.acc,
        c[3] / consts.gyro,
        c[4] / consts.gyro,
        c[5] / consts.gyro,
    ])
}

/// A continuous per-subject stream of samples at a nominal rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: u32,
    pub nominal_rate: f64,
    samples: Vec<ImuSample>,
}

impl Recording {
    pub fn new(
        subject_id: u32,
        samples: Vec<ImuSample>,
        nominal_rate: f64,
    ) -> Result<Self, DataError> {
        if !(nominal_rate > 0.0 && nominal_rate.is_finite()) {
            return Err(DataError::InvalidArgument(format!(
                "nominal rate must be positive, got {nominal_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(DataError::NonFinite { t: s.t });
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(DataError::NonMonotonic { index: i });
            }
        }
        if samples.len() > 1 {
            let mut gaps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
            gaps.sort_by(f64::total_cmp);
            let median_gap = gaps[gaps.len() / 2];
            let nominal_gap = 1.0 / nominal_rate;
            if (median_gap - nominal_gap).abs() > 0.1 * nominal_gap {
                return Err(DataError::RateMismatch {
                    median_gap,
                    rate: nominal_rate,
                });
            }
        }
        Ok(Self {
            subject_id,
            nominal_rate,
            samples,
        })
    }

    /// Skips the rate check. Used for decimated streams, where a non-integer
    /// rate ratio leaves an uneven but strictly increasing grid.
    pub(crate) fn from_decimated(
        subject_id: u32,
        samples: Vec<ImuSample>,
        nominal_rate: f64,
    ) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            subject_id,
            nominal_rate,
            samples,
        }
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn into_samples(self) -> Vec<ImuSample> {
        self.samples
    }
}

/// `k` consecutive normalized samples: the classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Index of the first sample within its recording.
    pub start_index: usize,
    /// Time of the first sample.
    pub t_start: f64,
    /// `t_start + (k - 1) / rate`: the window's time extent used for labeling.
    pub t_end: f64,
    k: usize,
    /// Row-major `k × 6` matrix (time step, then channel).
    values: Vec<f32>,
}

impl Window {
    pub fn from_values(start_index: usize, t_start: f64, t_end: f64, values: Vec<f32>) -> Self {
        assert!(
            values.len() % CHANNELS == 0,
            "window values must be a multiple of {CHANNELS}"
        );
        Self {
            start_index,
            t_start,
            t_end,
            k: values.len() / CHANNELS,
            values,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, step: usize) -> &[f32] {
        &self.values[step * CHANNELS..(step + 1) * CHANNELS]
    }
}

/// Cuts `rec` into windows of `k` samples starting at `0, stride, 2·stride, …`.
///
/// A recording shorter than `k` yields no windows.
pub fn make_windows(
    rec: &Recording,
    k: usize,
    stride: usize,
    consts: &NormalizationConstants,
) -> Result<Vec<Window>, DataError> {
    if k == 0 || stride == 0 {
        return Err(DataError::InvalidArgument(format!(
            "window length and stride must be at least 1 (k={k}, stride={stride})"
        )));
    }
    let samples = rec.samples();
    if samples.len() < k {
        log::warn!(
            "recording of subject {} has {} samples, fewer than k={k}; no windows",
            rec.subject_id,
            samples.len()
        );
        return Ok(Vec::new());
    }
    let normalized = samples
        .iter()
        .map(|s| normalize(s, consts))
        .collect::<Result<Vec<_>, _>>()?;
    let out_of_range = normalized
        .iter()
        .flatten()
        .filter(|v| v.abs() > 2.0)
        .count();
    if out_of_range > 0 {
        log::debug!(
            "subject {}: {out_of_range} normalized values outside [-2, 2]",
            rec.subject_id
        );
    }

    let span = (k - 1) as f64 / rec.nominal_rate;
    let count = (samples.len() - k) / stride + 1;
    let windows = (0..count)
        .map(|w| {
            let start = w * stride;
            let mut values = Vec::with_capacity(k * CHANNELS);
            for row in &normalized[start..start + k] {
                values.extend_from_slice(row);
            }
            let t_start = samples[start].t;
            Window::from_values(start, t_start, t_start + span, values)
        })
        .collect();
    Ok(windows)
}

/// Decimates `rec` onto a uniform grid at `target_rate`, picking for every grid
/// time the nearest recorded sample (earlier sample on ties).
pub fn resample(rec: &Recording, target_rate: f64) -> Result<Recording, DataError> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(DataError::InvalidArgument(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    if target_rate > rec.nominal_rate * (1.0 + 1e-9) {
        return Err(DataError::Upsampling {
            from: rec.nominal_rate,
            to: target_rate,
        });
    }
    if target_rate == rec.nominal_rate {
        return Ok(rec.clone());
    }
    let samples = rec.samples();
    let t0 = rec.start_time();
    let t_last = rec.end_time();
    let step = 1.0 / target_rate;
    // Half an input period of slack so the final grid point is not lost to rounding.
    let limit = t_last + 0.5 / rec.nominal_rate;
    let mut out: Vec<ImuSample> = Vec::new();
    let mut cursor = 0usize;
    let mut i = 0usize;
    loop {
        let grid_t = t0 + i as f64 * step;
        if grid_t > limit {
            break;
        }
        while cursor + 1 < samples.len() && samples[cursor + 1].t <= grid_t {
            cursor += 1;
        }
        let mut pick = cursor;
        if cursor + 1 < samples.len() {
            let before = grid_t - samples[cursor].t;
            let after = samples[cursor + 1].t - grid_t;
            if after < before {
                pick = cursor + 1;
            }
        }
        if out.last().is_none_or(|last| samples[pick].t > last.t) {
            out.push(samples[pick]);
        }
        i += 1;
    }
    Ok(Recording::from_decimated(rec.subject_id, out, target_rate))
}
