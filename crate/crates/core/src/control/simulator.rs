//! Simulated hand endpoint and the byte link feeding it.

use super::protocol::FrameDecoder;
use super::HandState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

/// Recently applied sequence numbers remembered for duplicate rejection.
pub const DEDUP_WINDOW: usize = 16;

/// Sending half of an ordered byte link. Each chunk carries its send time.
pub trait Transport {
    fn send(&mut self, t: f64, bytes: &[u8]);
}

/// Reliable in-order link over a channel.
#[derive(Debug, Clone)]
pub struct Loopback {
    tx: Sender<(f64, Vec<u8>)>,
}

impl Transport for Loopback {
    fn send(&mut self, t: f64, bytes: &[u8]) {
        // a closed receiver means the endpoint is gone; bytes are lost
        let _ = self.tx.send((t, bytes.to_vec()));
    }
}

pub fn loopback() -> (Loopback, Receiver<(f64, Vec<u8>)>) {
    let (tx, rx) = channel();
    (Loopback { tx }, rx)
}

/// Drops each chunk with probability `loss`; otherwise forwards it.
#[derive(Debug)]
pub struct LossyLink<T> {
    inner: T,
    loss: f64,
    rng: ChaCha8Rng,
    pub dropped: u64,
}

impl<T: Transport> LossyLink<T> {
    pub fn new(inner: T, loss: f64, seed: u64) -> Self {
        Self {
            inner,
            loss: loss.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dropped: 0,
        }
    }
}

impl<T: Transport> Transport for LossyLink<T> {
    fn send(&mut self, t: f64, bytes: &[u8]) {
        if self.rng.random_bool(self.loss) {
            self.dropped += 1;
        } else {
            self.inner.send(t, bytes);
        }
    }
}

/// Collects bytes in memory, for tests and offline replay.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub chunks: Vec<(f64, Vec<u8>)>,
}

impl Transport for Recorder {
    fn send(&mut self, t: f64, bytes: &[u8]) {
        self.chunks.push((t, bytes.to_vec()));
    }
}

/// Mirrors the hand state from received frames and logs every transition.
#[derive(Debug, Clone, Default)]
pub struct HandSimulator {
    pub state: HandState,
    pub log: Vec<String>,
    pub applied: u64,
    pub duplicates: u64,
    pub malformed: u64,
    decoder: FrameDecoder,
    recent: VecDeque<u8>,
}

impl HandSimulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn receive(&mut self, t: f64, bytes: &[u8]) {
        for result in self.decoder.feed(bytes) {
            match result {
                Ok((cmd, seq)) => {
                    if self.recent.contains(&seq) {
                        self.duplicates += 1;
                        continue;
                    }
                    if self.recent.len() == DEDUP_WINDOW {
                        self.recent.pop_front();
                    }
                    self.recent.push_back(seq);
                    self.state = self.state.apply(cmd);
                    self.applied += 1;
                    self.log
                        .push(format!("t={t:.3} cmd={} state={}", cmd.name(), self.state));
                }
                Err(_) => self.malformed += 1,
            }
        }
    }

    /// Runs an endpoint on its own thread until the link closes.
    pub fn spawn(rx: Receiver<(f64, Vec<u8>)>) -> JoinHandle<HandSimulator> {
        std::thread::spawn(move || {
            let mut sim = HandSimulator::new();
            for (t, bytes) in rx {
                sim.receive(t, &bytes);
            }
            sim
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::protocol::encode_frame;
    use super::super::{Controller, Grip, HandCommand};
    use super::*;
    use crate::gesture::Gesture;

    #[test]
    fn grasp_rotate_open_sequence() {
        let mut sim = HandSimulator::new();
        for (i, c) in [HandCommand::Grasp, HandCommand::RotateCw, HandCommand::Open]
            .iter()
            .enumerate()
        {
            sim.receive(i as f64, &encode_frame(*c, i as u8));
        }
        assert_eq!(sim.state.grip, Grip::Open);
        assert_eq!(sim.state.wrist_steps, 1);
        assert_eq!(sim.log[1], "t=1.000 cmd=ROTATE_CW state=grasp/1");
    }

    #[test]
    fn duplicates_apply_once_and_empty_stream_is_noop() {
        let mut sim = HandSimulator::new();
        sim.receive(0.0, &[]);
        assert_eq!(sim.state, HandState::default());
        let f = encode_frame(HandCommand::RotateCw, 3);
        sim.receive(0.0, &f);
        sim.receive(0.1, &f);
        assert_eq!(sim.state.wrist_steps, 1);
        assert_eq!(sim.duplicates, 1);
    }

    #[test]
    fn threaded_endpoint_mirrors_controller() {
        let (mut link, rx) = loopback();
        let handle = HandSimulator::spawn(rx);
        let mut ctl = Controller::new();
        let gs = [
            Gesture::G2,
            Gesture::G3,
            Gesture::G3,
            Gesture::G1,
            Gesture::G2,
            Gesture::G4,
            Gesture::G1,
        ];
        for (i, g) in gs.iter().enumerate() {
            if let Some((_, frame)) = ctl.handle(*g) {
                link.send(i as f64, &frame);
            }
        }
        drop(link);
        let sim = handle.join().unwrap();
        assert_eq!(sim.state, ctl.state);
        assert_eq!(sim.malformed, 0);
    }

    #[test]
    fn lossy_link_drops_some() {
        let mut link = LossyLink::new(Recorder::default(), 0.5, 1);
        for i in 0..100u8 {
            link.send(i as f64, &encode_frame(HandCommand::RotateCw, i));
        }
        assert!(link.dropped > 20 && link.dropped < 80);
        assert_eq!(link.dropped as usize + link.inner.chunks.len(), 100);
    }
}
