//! Hand control: gesture-driven state machine, wire framing and a simulated
//! hand endpoint.

pub mod protocol;
pub mod simulator;

use crate::gesture::Gesture;
use serde::{Deserialize, Serialize};
use std::fmt;

pub use protocol::{crc8, decode_frame, encode_frame, FrameDecoder, FrameError, FRAME_LEN, SYNC};
pub use simulator::{loopback, HandSimulator, Loopback, LossyLink, Recorder, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Grip {
    Open,
    Grasp,
    Pinch,
}

impl Grip {
    pub const ALL: [Grip; 3] = [Grip::Open, Grip::Grasp, Grip::Pinch];
}

impl fmt::Display for Grip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grip::Open => "open",
            Grip::Grasp => "grasp",
            Grip::Pinch => "pinch",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandCommand {
    Grasp = 1,
    Pinch = 2,
    RotateCw = 3,
    RotateCcw = 4,
    Open = 5,
}

impl HandCommand {
    pub const ALL: [HandCommand; 5] = [
        HandCommand::Grasp,
        HandCommand::Pinch,
        HandCommand::RotateCw,
        HandCommand::RotateCcw,
        HandCommand::Open,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            HandCommand::Grasp => "GRASP",
            HandCommand::Pinch => "PINCH",
            HandCommand::RotateCw => "ROTATE_CW",
            HandCommand::RotateCcw => "ROTATE_CCW",
            HandCommand::Open => "OPEN",
        }
    }
}

impl fmt::Display for HandCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hand posture as tracked by the controller. `last_closing` is the gesture
/// that closed the current grip and is `None` exactly when the grip is open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandState {
    pub grip: Grip,
    /// Clockwise positive.
    pub wrist_steps: i64,
    pub last_closing: Option<Gesture>,
}

impl Default for HandState {
    fn default() -> Self {
        Self {
            grip: Grip::Open,
            wrist_steps: 0,
            last_closing: None,
        }
    }
}

impl fmt::Display for HandState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.grip, self.wrist_steps)
    }
}

impl HandState {
    /// Grip part of a transition. Switching grips while closed is not allowed,
    /// so Grasp+g2 and Pinch+g1 do nothing.
    pub fn step(self, gesture: Gesture) -> (HandState, Option<HandCommand>) {
        use Gesture::*;
        let mut next = self;
        let cmd = match (self.grip, gesture) {
            (_, G3) => {
                next.wrist_steps += 1;
                Some(HandCommand::RotateCw)
            }
            (_, G4) => {
                next.wrist_steps -= 1;
                Some(HandCommand::RotateCcw)
            }
            (Grip::Open, G1) => {
                next.grip = Grip::Grasp;
                next.last_closing = Some(G1);
                Some(HandCommand::Grasp)
            }
            (Grip::Open, G2) => {
                next.grip = Grip::Pinch;
                next.last_closing = Some(G2);
                Some(HandCommand::Pinch)
            }
            (Grip::Grasp, G1) | (Grip::Pinch, G2) => {
                next.grip = Grip::Open;
                next.last_closing = None;
                Some(HandCommand::Open)
            }
            (Grip::Grasp, G2) | (Grip::Pinch, G1) => None,
        };
        (next, cmd)
    }

    /// Mirror update from a received command, used by the hand endpoint.
    pub fn apply(self, cmd: HandCommand) -> HandState {
        let mut next = self;
        match cmd {
            HandCommand::Grasp => {
                next.grip = Grip::Grasp;
                next.last_closing = Some(Gesture::G1);
            }
            HandCommand::Pinch => {
                next.grip = Grip::Pinch;
                next.last_closing = Some(Gesture::G2);
            }
            HandCommand::Open => {
                next.grip = Grip::Open;
                next.last_closing = None;
            }
            HandCommand::RotateCw => next.wrist_steps += 1,
            HandCommand::RotateCcw => next.wrist_steps -= 1,
        }
        next
    }

    pub fn is_consistent(&self) -> bool {
        (self.grip == Grip::Open) == self.last_closing.is_none()
    }
}

/// Replays confirmed gestures through the state machine from the default
/// state, returning the final state and every command issued.
pub fn replay(gestures: &[Gesture]) -> (HandState, Vec<HandCommand>) {
    let mut state = HandState::default();
    let mut cmds = Vec::new();
    for &g in gestures {
        let (next, cmd) = state.step(g);
        state = next;
        cmds.extend(cmd);
    }
    (state, cmds)
}

/// Holds the controller-side state and sequence counter and turns confirmed
/// gestures into frames.
#[derive(Debug, Clone, Default)]
pub struct Controller {
    pub state: HandState,
    seq: u8,
}

impl Controller {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies `gesture`; returns the command and its frame when one is issued.
    pub fn handle(&mut self, gesture: Gesture) -> Option<(HandCommand, [u8; FRAME_LEN])> {
        let (next, cmd) = self.state.step(gesture);
        self.state = next;
        let cmd = cmd?;
        let frame = encode_frame(cmd, self.seq);
        self.seq = self.seq.wrapping_add(1);
        Some((cmd, frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Gesture::*;

    fn s(grip: Grip, wrist: i64) -> HandState {
        HandState {
            grip,
            wrist_steps: wrist,
            last_closing: match grip {
                Grip::Open => None,
                Grip::Grasp => Some(G1),
                Grip::Pinch => Some(G2),
            },
        }
    }

    #[test]
    fn transition_table() {
        let table = [
            (Grip::Open, G1, s(Grip::Grasp, 0), Some(HandCommand::Grasp)),
            (Grip::Open, G2, s(Grip::Pinch, 0), Some(HandCommand::Pinch)),
            (
                Grip::Open,
                G3,
                s(Grip::Open, 1),
                Some(HandCommand::RotateCw),
            ),
            (
                Grip::Open,
                G4,
                s(Grip::Open, -1),
                Some(HandCommand::RotateCcw),
            ),
            (Grip::Grasp, G1, s(Grip::Open, 0), Some(HandCommand::Open)),
            (Grip::Grasp, G2, s(Grip::Grasp, 0), None),
            (
                Grip::Grasp,
                G3,
                s(Grip::Grasp, 1),
                Some(HandCommand::RotateCw),
            ),
            (
                Grip::Grasp,
                G4,
                s(Grip::Grasp, -1),
                Some(HandCommand::RotateCcw),
            ),
            (Grip::Pinch, G1, s(Grip::Pinch, 0), None),
            (Grip::Pinch, G2, s(Grip::Open, 0), Some(HandCommand::Open)),
            (
                Grip::Pinch,
                G3,
                s(Grip::Pinch, 1),
                Some(HandCommand::RotateCw),
            ),
            (
                Grip::Pinch,
                G4,
                s(Grip::Pinch, -1),
                Some(HandCommand::RotateCcw),
            ),
        ];
        for (grip, g, next, cmd) in table {
            assert_eq!(s(grip, 0).step(g), (next, cmd), "{grip} + {g}");
        }
    }

    #[test]
    fn mirror_agrees_with_controller() {
        let (state, cmds) = replay(&[G1, G3, G2, G1, G4, G4, G2]);
        let mirrored = cmds.iter().fold(HandState::default(), |s, c| s.apply(*c));
        assert_eq!(state, mirrored);
        assert_eq!(state, s(Grip::Pinch, -1));
    }

    fn gesture() -> impl Strategy<Value = Gesture> {
        (1usize..=4).prop_map(|c| Gesture::from_class(c).unwrap())
    }

    proptest! {
        #[test]
        fn invariants_hold(gs in proptest::collection::vec(gesture(), 0..60)) {
            let mut st = HandState::default();
            for &g in &gs {
                st = st.step(g).0;
                prop_assert!(st.is_consistent());
            }
            let cw = gs.iter().filter(|&&g| g == G3).count() as i64;
            let ccw = gs.iter().filter(|&&g| g == G4).count() as i64;
            prop_assert_eq!(st.wrist_steps, cw - ccw);
            let (_, cmds) = replay(&gs);
            let mirrored = cmds.iter().fold(HandState::default(), |s, c| s.apply(*c));
            prop_assert_eq!(mirrored, st);
        }

        #[test]
        fn close_open_pairs_return_to_open(
            pairs in proptest::collection::vec((prop_oneof![Just(G1), Just(G2)], proptest::collection::vec(prop_oneof![Just(G3), Just(G4)], 0..3)), 1..10)
        ) {
            let mut gs = Vec::new();
            for (close, rotations) in pairs {
                gs.push(close);
                gs.extend(rotations);
                gs.push(close);
            }
            prop_assert_eq!(replay(&gs).0.grip, Grip::Open);
        }
    }
}
