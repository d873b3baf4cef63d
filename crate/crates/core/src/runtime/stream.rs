//! Per-sample streaming classification over a fixed ring buffer.

use crate::imu::{normalize, ImuSample, NormalizationConstants, CHANNELS};
use crate::nn::{Model, NnError, Workspace};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// When the session runs inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StreamMode {
    /// One inference per accepted sample once the window is full.
    EverySample,
    /// Models a device that can only run `device_hz` inferences per second:
    /// samples arriving while the previous inference is still "running" are
    /// buffered but not classified.
    SkipWhenBusy { device_hz: f64 },
}

/// Streaming session. The ring buffer holds every sample twice, at slot `i`
/// and `i + k`, so the latest window is always one contiguous slice.
#[derive(Debug, Clone)]
pub struct StreamSession {
    model: Arc<Model<f32>>,
    consts: NormalizationConstants,
    mode: StreamMode,
    ring: Vec<f32>,
    ws: Workspace<f32>,
    accepted: u64,
    dropped: u64,
    skipped: u64,
    windows: u64,
    busy_until: f64,
    last_t: f64,
}

impl StreamSession {
    pub fn new(model: Arc<Model<f32>>, consts: NormalizationConstants, mode: StreamMode) -> Self {
        let k = model.config.k;
        let ws = Workspace::new(&model.config);
        Self {
            model,
            consts,
            mode,
            ring: vec![0.0; 2 * k * CHANNELS],
            ws,
            accepted: 0,
            dropped: 0,
            skipped: 0,
            windows: 0,
            busy_until: f64::NEG_INFINITY,
            last_t: f64::NAN,
        }
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    /// Bytes of the ring buffer.
    pub fn ring_bytes(&self) -> usize {
        self.ring.len() * std::mem::size_of::<f32>()
    }

    pub fn workspace_bytes(&self) -> usize {
        self.ws.bytes()
    }

    /// Samples rejected for non-finite values.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Full windows not classified because the device was busy.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    /// Number of windows classified so far.
    pub fn windows(&self) -> u64 {
        self.windows
    }

    /// Timestamp of the latest accepted sample.
    pub fn last_time(&self) -> f64 {
        self.last_t
    }

    fn latest_window(&self) -> &[f32] {
        let k = self.model.config.k;
        let start = (self.accepted as usize) % k;
        &self.ring[start * CHANNELS..(start + k) * CHANNELS]
    }

    /// Pushes one sample and returns the class probabilities of the window
    /// ending at it, if one was classified. Non-finite samples are dropped.
    pub fn push(&mut self, sample: &ImuSample) -> Result<Option<&[f32]>, NnError> {
        let Ok(values) = normalize(sample, &self.consts) else {
            self.dropped += 1;
            return Ok(None);
        };
        let k = self.model.config.k;
        let slot = (self.accepted as usize) % k;
        self.ring[slot * CHANNELS..(slot + 1) * CHANNELS].copy_from_slice(&values);
        self.ring[(slot + k) * CHANNELS..(slot + k + 1) * CHANNELS].copy_from_slice(&values);
        self.accepted += 1;
        self.last_t = sample.t;
        if (self.accepted as usize) < k {
            return Ok(None);
        }
        if let StreamMode::SkipWhenBusy { device_hz } = self.mode {
            if sample.t < self.busy_until {
                self.skipped += 1;
                return Ok(None);
            }
            self.busy_until = sample.t + 1.0 / device_hz;
        }
        let model = Arc::clone(&self.model);
        let start = (self.accepted as usize) % k;
        model.infer_into(
            &self.ring[start * CHANNELS..(start + k) * CHANNELS],
            &mut self.ws,
        )?;
        self.windows += 1;
        Ok(Some(self.ws.probs()))
    }

    /// Copy of the current window, for diagnostics.
    pub fn window_snapshot(&self) -> Option<Vec<f32>> {
        ((self.accepted as usize) >= self.model.config.k).then(|| self.latest_window().to_vec())
    }
}

/// Streams a whole sample sequence and collects every probability vector.
pub fn stream_classify(
    session: &mut StreamSession,
    samples: &[ImuSample],
) -> Result<Vec<Vec<f32>>, NnError> {
    let mut out = Vec::new();
    for s in samples {
        if let Some(p) = session.push(s)? {
            out.push(p.to_vec());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu::{make_windows, synth, Recording};
    use crate::nn::{Mode, ModelConfig};
    use crate::training::init_weights;

    fn session(mode: StreamMode) -> StreamSession {
        let model = init_weights(ModelConfig::default(), 3).unwrap();
        StreamSession::new(Arc::new(model), NormalizationConstants::default(), mode)
    }

    fn recording(n: usize) -> Recording {
        let spec = synth::SynthSpec::noise_only(0, n as f64 / 100.0);
        synth::generate_synthetic(&spec, 1).unwrap().0
    }

    #[test]
    fn warm_up_then_one_output_per_sample() {
        let rec = recording(100);
        let mut s = session(StreamMode::EverySample);
        let outs: Vec<bool> = rec
            .samples()
            .iter()
            .map(|x| s.push(x).unwrap().is_some())
            .collect();
        assert!(outs[..59].iter().all(|o| !o));
        assert!(outs[59..].iter().all(|&o| o));
        assert_eq!(s.windows(), rec.len() as u64 - 59);
    }

    #[test]
    fn matches_batch_windows() {
        let rec = recording(150);
        let mut s = session(StreamMode::EverySample);
        let streamed = stream_classify(&mut s, rec.samples()).unwrap();
        let windows = make_windows(&rec, 60, 1, &NormalizationConstants::default()).unwrap();
        assert_eq!(streamed.len(), windows.len());
        for (w, p) in windows.iter().zip(&streamed) {
            let batch = s.model().forward(w.values(), Mode::Eval).unwrap();
            assert_eq!(&batch.probs, p);
        }
    }

    #[test]
    fn non_finite_samples_are_dropped() {
        let rec = recording(80);
        let mut s = session(StreamMode::EverySample);
        let mut bad = rec.samples()[0];
        bad.acc[1] = f32::NAN;
        assert!(s.push(&bad).unwrap().is_none());
        assert_eq!(s.dropped(), 1);
        assert_eq!(s.accepted(), 0);
    }

    #[test]
    fn skip_when_busy_classifies_at_device_rate() {
        let rec = recording(1000);
        let mut s = session(StreamMode::SkipWhenBusy { device_hz: 75.0 });
        stream_classify(&mut s, rec.samples()).unwrap();
        let full = 1000 - 59;
        assert_eq!(s.windows() + s.skipped(), full);
        let rate = s.windows() as f64 / (full as f64 / 100.0);
        assert!((rate - 75.0).abs() < 26.0, "{rate}");
        assert!(s.windows() < full as u64);
    }
}
