//! Replays a recording through the whole deployed chain: streaming
//! classifier, detector, double-gesture gate, state machine, wire link and the
//! simulated hand.

use crate::control::{
    loopback, Controller, HandCommand, HandSimulator, HandState, LossyLink, Transport,
};
use crate::gesture::{Gesture, NUM_CLASSES};
use crate::imu::{NormalizationConstants, Recording};
use crate::labeling::LabelInterval;
use crate::nn::{Model, NnError};
use crate::runtime::{
    budget_for_config, DetectionEvent, Detector, DoubleGestureGate, MemoryReport, StreamMode,
    StreamSession, TriggerConfig,
};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum E2eError {
    #[error("model and session exceed the memory budget ({} of {} bytes)", .0.total_bytes, .0.limit_bytes)]
    Budget(MemoryReport),
    #[error(transparent)]
    Trigger(#[from] crate::runtime::detect::TriggerError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E2eConfig {
    pub trigger: TriggerConfig,
    pub mode: StreamMode,
    pub normalization: NormalizationConstants,
    /// A confirmation counts for a ground-truth pair if it lands between the
    /// first onset and this long after the second offset.
    pub match_slack: f64,
    /// Probability that a frame is lost on the link.
    pub link_loss: f64,
    pub seed: u64,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            trigger: TriggerConfig::default(),
            mode: StreamMode::EverySample,
            normalization: NormalizationConstants::default(),
            match_slack: 1.0,
            link_loss: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub gesture: Gesture,
    pub t: f64,
}

/// Two same-gesture performances close enough to form one double gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPair {
    pub gesture: Gesture,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub samples: usize,
    pub windows: u64,
    pub dropped_samples: u64,
    pub skipped_windows: u64,
    pub events: Vec<DetectionEvent>,
    pub confirmations: Vec<Confirmation>,
    pub commands: Vec<(f64, HandCommand)>,
    pub expected: Vec<ExpectedPair>,
    /// Indexed by class; class 0 is unused.
    pub expected_per_class: [usize; NUM_CLASSES],
    pub hits_per_class: [usize; NUM_CLASSES],
    pub false_activations: usize,
    pub controller_state: HandState,
    pub simulator_state: HandState,
    pub simulator_log: Vec<String>,
    pub frames_lost: u64,
    pub frames_malformed: u64,
}

impl SessionReport {
    pub fn hit_rate(&self, g: Gesture) -> Option<f64> {
        let c = g.class();
        (self.expected_per_class[c] > 0)
            .then(|| self.hits_per_class[c] as f64 / self.expected_per_class[c] as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Pairs consecutive same-gesture labels whose onsets are within `timeout`.
pub fn expected_pairs(labels: &[LabelInterval], timeout: f64) -> Vec<ExpectedPair> {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < sorted.len() {
        let (a, b) = (sorted[i], sorted[i + 1]);
        if a.gesture == b.gesture && b.t_s - a.t_s <= timeout {
            out.push(ExpectedPair {
                gesture: a.gesture,
                t_start: a.t_s,
                t_end: b.t_e,
            });
            i += 2;
        } else {
            i += 1;
        }
    }
    out
}

pub fn simulate_e2e(
    rec: &Recording,
    labels: &[LabelInterval],
    model: Arc<Model<f32>>,
    cfg: &E2eConfig,
) -> Result<SessionReport, E2eError> {
    let budget = budget_for_config(&model.config);
    if !budget.pass {
        return Err(E2eError::Budget(budget));
    }
    let mut detector = Detector::new(cfg.trigger)?;
    let mut gate = DoubleGestureGate::new(&cfg.trigger);
    let mut session = StreamSession::new(model, cfg.normalization, cfg.mode);
    let mut controller = Controller::new();
    let (link, rx) = loopback();
    let mut link = LossyLink::new(link, cfg.link_loss, cfg.seed);
    let endpoint = HandSimulator::spawn(rx);

    let mut events = Vec::new();
    let mut confirmations = Vec::new();
    let mut commands = Vec::new();
    let mut on_event = |ev: DetectionEvent, link: &mut LossyLink<_>| {
        events.push(ev);
        if let Some(g) = gate.push(ev) {
            confirmations.push(Confirmation {
                gesture: g,
                t: ev.t_end,
            });
            if let Some((cmd, frame)) = controller.handle(g) {
                commands.push((ev.t_end, cmd));
                link.send(ev.t_end, &frame);
            }
        }
    };
    let mut window_index = 0u64;
    for s in rec.samples() {
        let Some(probs) = session.push(s)? else {
            continue;
        };
        let ev = detector.push(window_index, s.t, probs);
        window_index += 1;
        if let Some(ev) = ev {
            on_event(ev, &mut link);
        }
    }
    if let Some(ev) = detector.finish() {
        on_event(ev, &mut link);
    }
    let frames_lost = link.dropped;
    drop(link);
    let sim = endpoint.join().expect("hand simulator thread");

    let expected = expected_pairs(labels, cfg.trigger.double_gesture_timeout);
    let mut expected_per_class = [0; NUM_CLASSES];
    for p in &expected {
        expected_per_class[p.gesture.class()] += 1;
    }
    let mut matched = vec![false; expected.len()];
    let mut hits_per_class = [0; NUM_CLASSES];
    let mut false_activations = 0;
    for c in &confirmations {
        let hit = expected.iter().enumerate().find(|(i, p)| {
            !matched[*i]
                && p.gesture == c.gesture
                && c.t >= p.t_start
                && c.t <= p.t_end + cfg.match_slack
        });
        match hit {
            Some((i, p)) => {
                matched[i] = true;
                hits_per_class[p.gesture.class()] += 1;
            }
            None => false_activations += 1,
        }
    }

    Ok(SessionReport {
        samples: rec.len(),
        windows: session.windows(),
        dropped_samples: session.dropped(),
        skipped_windows: session.skipped(),
        events,
        confirmations,
        commands,
        expected,
        expected_per_class,
        hits_per_class,
        false_activations,
        controller_state: controller.state,
        simulator_state: sim.state,
        simulator_log: sim.log,
        frames_lost,
        frames_malformed: sim.malformed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_from_labels() {
        let l = |g, t: f64| LabelInterval::new(g, t, t + 0.6).unwrap();
        let labels = [
            l(Gesture::G1, 1.0),
            l(Gesture::G1, 2.2),
            l(Gesture::G2, 6.0),
            l(Gesture::G3, 7.0),
            l(Gesture::G3, 7.9),
            l(Gesture::G3, 8.8),
        ];
        let p = expected_pairs(&labels, 2.0);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].gesture, p[0].t_start), (Gesture::G1, 1.0));
        assert!((p[0].t_end - 2.8).abs() < 1e-12);
        assert_eq!(p[1].gesture, Gesture::G3);
    }
}
