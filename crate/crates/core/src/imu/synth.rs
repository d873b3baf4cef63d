//! Synthetic ankle-IMU recordings with known gesture intervals.
//!
//! Each gesture is a smooth burst on its own subset of channels, added on top
//! of gravity, slow "regular activity" sway and white sensor noise. Every
//! synthetic subject draws its own amplitude, time-warp, tilt and noise
//! factors from the seed, so held-out subjects differ from training subjects.

use super::{ImuSample, Recording};
use crate::gesture::Gesture;
use crate::labeling::LabelInterval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("degenerate gesture template: {0}")]
    DegenerateTemplate(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BurstShape {
    /// Half sine: one lobe.
    Bump,
    /// Full sine: a positive lobe followed by a negative one.
    Biphasic,
}

impl BurstShape {
    fn at(self, u: f64) -> f64 {
        match self {
            BurstShape::Bump => (PI * u).sin(),
            BurstShape::Biphasic => (2.0 * PI * u).sin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureTemplate {
    /// Peak contribution per channel, in raw units (m/s² or rad/s).
    pub amplitudes: [f64; 6],
    pub shape: BurstShape,
}

/// One scheduled gesture, performed `repeats` times in quick succession.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub gesture: Gesture,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// White-noise standard deviation on accelerations.
    pub acc_sigma: f64,
    pub gyro_sigma: f64,
    /// Amplitude of the slow background sway on accelerations.
    pub activity_acc: f64,
    pub activity_gyro: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSpec {
    /// Per-subject, per-gesture amplitude factor drawn from `1 ± amplitude`.
    pub amplitude: f64,
    /// Per-subject duration factor drawn from `1 ± time_warp`.
    pub time_warp: f64,
    /// Per-performance amplitude factor `1 ± per_event_amplitude`.
    pub per_event_amplitude: f64,
    /// Maximum sensor tilt in radians (moves gravity between axes).
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subject_id: u32,
    pub rate: f64,
    pub templates: [GestureTemplate; 4],
    pub schedule: Vec<Performance>,
    /// Range of gesture durations in seconds.
    pub gesture_duration: (f64, f64),
    /// Pause between repetitions inside one performance.
    pub repeat_gap: (f64, f64),
    /// Pause between performances.
    pub performance_gap: (f64, f64),
    /// Gesture-free activity before the first and after the last performance.
    pub lead_noise: f64,
    pub tail_noise: f64,
    pub noise: NoiseSpec,
    pub jitter: JitterSpec,
}

pub fn default_templates() -> [GestureTemplate; 4] {
    [
        GestureTemplate {
            amplitudes: [5.0, 0.0, 0.0, 0.0, 2.5, 0.0],
            shape: BurstShape::Bump,
        },
        GestureTemplate {
            amplitudes: [0.0, 5.0, 0.0, 2.5, 0.0, 0.0],
            shape: BurstShape::Biphasic,
        },
        GestureTemplate {
            amplitudes: [0.0, 0.0, 4.0, 0.0, 0.0, 2.5],
            shape: BurstShape::Bump,
        },
        GestureTemplate {
            amplitudes: [-4.0, 0.0, 0.0, 0.0, 0.0, -2.5],
            shape: BurstShape::Biphasic,
        },
    ]
}

impl SynthSpec {
    /// No gestures at all: a pure background-activity recording of `seconds`.
    pub fn noise_only(subject_id: u32, seconds: f64) -> Self {
        Self {
            subject_id,
            rate: 100.0,
            templates: default_templates(),
            schedule: Vec::new(),
            gesture_duration: (0.5, 1.0),
            repeat_gap: (0.5, 0.8),
            performance_gap: (1.0, 2.0),
            lead_noise: seconds,
            tail_noise: 0.0,
            noise: NoiseSpec {
                acc_sigma: 0.15,
                gyro_sigma: 0.05,
                activity_acc: 0.6,
                activity_gyro: 0.3,
            },
            jitter: JitterSpec {
                amplitude: 0.2,
                time_warp: 0.15,
                per_event_amplitude: 0.1,
                tilt: 0.15,
            },
        }
    }

    /// `reps` single performances of each gesture, round-robin, framed by
    /// ten seconds of background activity on either side.
    pub fn balanced(subject_id: u32, reps: usize) -> Self {
        let schedule = (0..reps)
            .flat_map(|_| Gesture::ALL)
            .map(|gesture| Performance {
                gesture,
                repeats: 1,
            })
            .collect();
        Self {
            schedule,
            lead_noise: 10.0,
            tail_noise: 10.0,
            ..Self::noise_only(subject_id, 0.0)
        }
    }

    /// `pairs` double performances of each gesture, round-robin, with pauses
    /// between performances long enough that pairs do not run together.
    pub fn doubles(subject_id: u32, pairs: usize) -> Self {
        let schedule = (0..pairs)
            .flat_map(|_| Gesture::ALL)
            .map(|gesture| Performance {
                gesture,
                repeats: 2,
            })
            .collect();
        Self {
            schedule,
            performance_gap: (3.0, 4.0),
            lead_noise: 5.0,
            tail_noise: 5.0,
            ..Self::noise_only(subject_id, 0.0)
        }
    }

    pub fn gesture_count(&self) -> usize {
        self.schedule.iter().map(|p| p.repeats).sum()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let (d0, d1) = self.gesture_duration;
        if !(d0 > 0.0 && d0 <= d1) || d0 * self.rate < 1.0 {
            return Err(SynthError::DegenerateTemplate(format!(
                "gesture duration range ({d0}, {d1}) at {} Hz",
                self.rate
            )));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("rate {}", self.rate)));
        }
        for (name, (lo, hi)) in [
            ("repeat_gap", self.repeat_gap),
            ("performance_gap", self.performance_gap),
        ] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(SynthError::InvalidSpec(format!("{name} ({lo}, {hi})")));
            }
        }
        if self.lead_noise < 0.0 || self.tail_noise < 0.0 {
            return Err(SynthError::InvalidSpec("negative noise stretch".into()));
        }
        Ok(())
    }
}

struct Burst {
    gesture: Gesture,
    start: usize,
    len: usize,
    gain: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates one synthetic subject. Output is a pure function of `(spec, seed)`.
pub fn generate_synthetic(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Recording, Vec<LabelInterval>), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = spec.rate;

    let j = spec.jitter;
    let gains: Vec<f64> = (0..4)
        .map(|_| uniform(&mut rng, (1.0 - j.amplitude, 1.0 + j.amplitude)))
        .collect();
    let warp = uniform(&mut rng, (1.0 - j.time_warp, 1.0 + j.time_warp));
    let tilt_x = uniform(&mut rng, (-j.tilt, j.tilt));
    let tilt_y = uniform(&mut rng, (-j.tilt, j.tilt));
    let noise_scale = uniform(&mut rng, (0.8, 1.2));

    // Background sway: two sinusoids per channel.
    let sway: Vec<[(f64, f64, f64); 2]> = (0..6)
        .map(|c| {
            let amp = if c < 3 {
                spec.noise.activity_acc
            } else {
                spec.noise.activity_gyro
            };
            [0, 1].map(|_| {
                (
                    amp * 0.5 * uniform(&mut rng, (0.5, 1.5)),
                    uniform(&mut rng, (0.2, 1.2)),
                    uniform(&mut rng, (0.0, 2.0 * PI)),
                )
            })
        })
        .collect();

    let (d0, d1) = spec.gesture_duration;
    let mut bursts = Vec::with_capacity(spec.gesture_count());
    let mut cursor = spec.lead_noise;
    for perf in &spec.schedule {
        for r in 0..perf.repeats {
            let duration = (uniform(&mut rng, (d0, d1)) * warp).clamp(d0, d1);
            let len = ((duration * rate).round() as usize + 1).max(2);
            let start = (cursor * rate).round() as usize;
            let gain = gains[perf.gesture.class() - 1]
                * uniform(
                    &mut rng,
                    (1.0 - j.per_event_amplitude, 1.0 + j.per_event_amplitude),
                );
            bursts.push(Burst {
                gesture: perf.gesture,
                start,
                len,
                gain,
            });
            let gap = if r + 1 < perf.repeats {
                spec.repeat_gap
            } else {
                spec.performance_gap
            };
            cursor = (start + len - 1) as f64 / rate + uniform(&mut rng, gap);
        }
    }
    let total = match bursts.last() {
        Some(b) => b.start + b.len + (spec.tail_noise * rate).round() as usize,
        None => ((spec.lead_noise + spec.tail_noise) * rate).round() as usize,
    }
    .max(1);

    let gravity = [
        GRAVITY * tilt_x.sin(),
        GRAVITY * tilt_y.sin(),
        GRAVITY * tilt_x.cos() * tilt_y.cos(),
    ];
    let acc_noise = Normal::new(0.0, spec.noise.acc_sigma * noise_scale)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let gyro_noise = Normal::new(0.0, spec.noise.gyro_sigma * noise_scale)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut values = vec![[0f64; 6]; total];
    for (i, row) in values.iter_mut().enumerate() {
        let t = i as f64 / rate;
        for (c, v) in row.iter_mut().enumerate() {
            let base = if c < 3 { gravity[c] } else { 0.0 };
            let sway: f64 = sway[c]
                .iter()
                .map(|&(a, f, p)| a * (2.0 * PI * f * t + p).sin())
                .sum();
            let noise = if c < 3 {
                acc_noise.sample(&mut rng)
            } else {
                gyro_noise.sample(&mut rng)
            };
            *v = base + sway + noise;
        }
    }
    let mut labels = Vec::with_capacity(bursts.len());
    for b in &bursts {
        let template = &spec.templates[b.gesture.class() - 1];
        for step in 0..b.len {
            let u = step as f64 / (b.len - 1) as f64;
            let s = template.shape.at(u) * b.gain;
            for (c, v) in values[b.start + step].iter_mut().enumerate() {
                *v += template.amplitudes[c] * s;
            }
        }
        labels.push(LabelInterval {
            gesture: b.gesture,
            t_s: b.start as f64 / rate,
            t_e: (b.start + b.len - 1) as f64 / rate,
        });
    }

    let samples = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            ImuSample::new(
                i as f64 / rate,
                [v[0] as f32, v[1] as f32, v[2] as f32],
                [v[3] as f32, v[4] as f32, v[5] as f32],
            )
        })
        .collect();
    let recording = Recording::new(spec.subject_id, samples, rate)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok((recording, labels))
}
