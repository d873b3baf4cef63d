//! Turning per-window probabilities into discrete gesture events and
//! confirmed double gestures.

use crate::gesture::Gesture;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid trigger config: {0}")]
pub struct TriggerError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerConfig {
    pub prob_threshold: f32,
    pub min_consecutive_windows: usize,
    /// Longest onset-to-onset gap between the two halves of a double gesture.
    pub double_gesture_timeout: f64,
    /// Quiet time after an event closes during which no new run starts.
    pub refractory: f64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.8,
            min_consecutive_windows: 3,
            double_gesture_timeout: 2.0,
            refractory: 0.5,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), TriggerError> {
        if !(self.prob_threshold > 0.0 && self.prob_threshold <= 1.0) {
            return Err(TriggerError(format!(
                "probability threshold must be in (0, 1], got {}",
                self.prob_threshold
            )));
        }
        if self.min_consecutive_windows == 0 {
            return Err(TriggerError(
                "min_consecutive_windows must be positive".into(),
            ));
        }
        if !(self.double_gesture_timeout > 0.0) || !(self.refractory > 0.0) {
            return Err(TriggerError(
                "timeout and refractory must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub gesture: Gesture,
    pub start_window: u64,
    pub end_window: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub peak_probability: f32,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    class: usize,
    len: usize,
    start_window: u64,
    end_window: u64,
    t_start: f64,
    t_end: f64,
    peak: f32,
}

/// Debounces a stream of probability vectors. An event is emitted when its
/// run ends (or on [`Detector::finish`]).
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: TriggerConfig,
    run: Option<Run>,
    refractory_until: f64,
}

impl Detector {
    pub fn new(cfg: TriggerConfig) -> Result<Self, TriggerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            run: None,
            refractory_until: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.cfg
    }

    fn close(&mut self) -> Option<DetectionEvent> {
        let run = self.run.take()?;
        if run.len < self.cfg.min_consecutive_windows {
            return None;
        }
        self.refractory_until = run.t_end + self.cfg.refractory;
        Some(DetectionEvent {
            gesture: Gesture::from_class(run.class).expect("gesture class"),
            start_window: run.start_window,
            end_window: run.end_window,
            t_start: run.t_start,
            t_end: run.t_end,
            peak_probability: run.peak,
        })
    }

    /// Feeds the probabilities of window `index`, whose latest sample is at
    /// time `t`.
    pub fn push(&mut self, index: u64, t: f64, probs: &[f32]) -> Option<DetectionEvent> {
        let hit = (1..probs.len().min(5))
            .filter(|&c| probs[c] >= self.cfg.prob_threshold)
            .max_by(|&a, &b| probs[a].total_cmp(&probs[b]));
        if let (Some(c), Some(run)) = (hit, self.run.as_mut()) {
            if run.class == c {
                run.len += 1;
                run.end_window = index;
                run.t_end = t;
                run.peak = run.peak.max(probs[c]);
                return None;
            }
        }
        let event = self.close();
        if let Some(c) = hit {
            if t >= self.refractory_until {
                self.run = Some(Run {
                    class: c,
                    len: 1,
                    start_window: index,
                    end_window: index,
                    t_start: t,
                    t_end: t,
                    peak: probs[c],
                });
            }
        }
        event
    }

    /// Closes any open run.
    pub fn finish(&mut self) -> Option<DetectionEvent> {
        self.close()
    }
}

/// Upper bound on simultaneously pending events; the oldest is dropped when
/// full.
pub const GATE_CAPACITY: usize = 8;

/// Confirms a gesture when two events of the same class start within the
/// timeout of each other. A confirming pair is consumed.
#[derive(Debug, Clone)]
pub struct DoubleGestureGate {
    timeout: f64,
    pending: Vec<DetectionEvent>,
}

impl DoubleGestureGate {
    pub fn new(cfg: &TriggerConfig) -> Self {
        Self {
            timeout: cfg.double_gesture_timeout,
            pending: Vec::with_capacity(GATE_CAPACITY),
        }
    }

    pub fn pending(&self) -> &[DetectionEvent] {
        &self.pending
    }

    /// Drops pending events that can no longer pair with anything at time `t`.
    pub fn expire(&mut self, t: f64) {
        let timeout = self.timeout;
        self.pending.retain(|p| t - p.t_start <= timeout);
    }

    pub fn push(&mut self, event: DetectionEvent) -> Option<Gesture> {
        self.expire(event.t_start);
        if let Some(i) = self.pending.iter().position(|p| p.gesture == event.gesture) {
            self.pending.remove(i);
            return Some(event.gesture);
        }
        if self.pending.len() == GATE_CAPACITY {
            self.pending.remove(0);
        }
        self.pending.push(event);
        None
    }
}

/// Runs events through a fresh gate.
pub fn double_gesture_gate(events: &[DetectionEvent], cfg: &TriggerConfig) -> Vec<Gesture> {
    let mut gate = DoubleGestureGate::new(cfg);
    events.iter().filter_map(|e| gate.push(*e)).collect()
}

/// Runs a probability sequence through a fresh detector, one window per
/// `(t, probs)` entry.
pub fn detect(
    windows: &[(f64, Vec<f32>)],
    cfg: &TriggerConfig,
) -> Result<Vec<DetectionEvent>, TriggerError> {
    let mut d = Detector::new(*cfg)?;
    let mut out: Vec<DetectionEvent> = windows
        .iter()
        .enumerate()
        .filter_map(|(i, (t, p))| d.push(i as u64, *t, p))
        .collect();
    out.extend(d.finish());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(class: usize, v: f32) -> Vec<f32> {
        let mut out = vec![(1.0 - v) / 4.0; 5];
        out[class] = v;
        out
    }

    fn seq(classes: &[(usize, f32)]) -> Vec<(f64, Vec<f32>)> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &(c, v))| (i as f64 * 0.01, p(c, v)))
            .collect()
    }

    fn ev(g: Gesture, t: f64) -> DetectionEvent {
        DetectionEvent {
            gesture: g,
            start_window: 0,
            end_window: 0,
            t_start: t,
            t_end: t + 0.3,
            peak_probability: 0.9,
        }
    }

    #[test]
    fn three_high_windows_make_one_event() {
        let cfg = TriggerConfig::default();
        let events = detect(
            &seq(&[(0, 0.9), (2, 0.9), (2, 0.9), (2, 0.9), (0, 0.9)]),
            &cfg,
        )
        .unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].gesture, Gesture::G2);
        assert_eq!((events[0].start_window, events[0].end_window), (1, 3));
    }

    #[test]
    fn two_windows_are_not_enough() {
        let cfg = TriggerConfig::default();
        assert!(detect(&seq(&[(2, 0.9), (2, 0.95), (0, 0.9)]), &cfg)
            .unwrap()
            .is_empty());
        assert!(detect(&seq(&[(2, 0.9), (2, 0.7), (2, 0.9)]), &cfg)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn long_runs_coalesce() {
        let cfg = TriggerConfig::default();
        let events = detect(&seq(&[(3, 0.9); 10]), &cfg).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].end_window, 9);
    }

    #[test]
    fn refractory_blocks_immediate_retrigger() {
        let cfg = TriggerConfig::default();
        let mut s = vec![(1, 0.9); 4];
        s.push((0, 0.9));
        s.extend([(1, 0.9); 4]);
        assert_eq!(detect(&seq(&s), &cfg).unwrap().len(), 1);
        let mut windows = seq(&[(1, 0.9); 4]);
        windows.push((0.05, p(0, 0.9)));
        for i in 0..4 {
            windows.push((1.0 + i as f64 * 0.01, p(1, 0.9)));
        }
        assert_eq!(detect(&windows, &cfg).unwrap().len(), 2);
    }

    #[test]
    fn gate_pairs_and_consumes() {
        let cfg = TriggerConfig::default();
        assert_eq!(
            double_gesture_gate(&[ev(Gesture::G1, 0.0), ev(Gesture::G1, 0.8)], &cfg),
            vec![Gesture::G1]
        );
        let mut gate = DoubleGestureGate::new(&cfg);
        assert_eq!(gate.push(ev(Gesture::G1, 0.0)), None);
        assert_eq!(gate.push(ev(Gesture::G2, 0.5)), None);
        assert_eq!(gate.pending().len(), 2);
        gate.expire(3.0);
        assert!(gate.pending().is_empty());
        let three = [
            ev(Gesture::G1, 0.0),
            ev(Gesture::G1, 0.7),
            ev(Gesture::G1, 1.4),
        ];
        let mut gate = DoubleGestureGate::new(&cfg);
        let confirmed: Vec<_> = three.iter().filter_map(|e| gate.push(*e)).collect();
        assert_eq!(confirmed, vec![Gesture::G1]);
        assert_eq!(gate.pending().len(), 1);
    }

    #[test]
    fn gate_times_out() {
        let cfg = TriggerConfig::default();
        assert!(
            double_gesture_gate(&[ev(Gesture::G3, 0.0), ev(Gesture::G3, 2.5)], &cfg).is_empty()
        );
    }

    #[test]
    fn config_validation() {
        assert!(TriggerConfig::default().validate().is_ok());
        let bad = TriggerConfig {
            refractory: 0.0,
            ..Default::default()
        };
        assert!(Detector::new(bad).is_err());
    }
}
