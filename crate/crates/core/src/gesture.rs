use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of output classes: "no gesture" plus the four leg gestures.
pub const NUM_CLASSES: usize = 5;

/// One of the four leg gestures. Class 0 ("no gesture") is represented by
/// the absence of a `Gesture`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gesture {
    G1,
    G2,
    G3,
    G4,
}

impl Gesture {
    pub const ALL: [Gesture; 4] = [Gesture::G1, Gesture::G2, Gesture::G3, Gesture::G4];

    /// Class index used by the classifiers (1..=4).
    pub fn class(self) -> usize {
        match self {
            Gesture::G1 => 1,
            Gesture::G2 => 2,
            Gesture::G3 => 3,
            Gesture::G4 => 4,
        }
    }

    pub fn from_class(class: usize) -> Option<Gesture> {
        match class {
            1 => Some(Gesture::G1),
            2 => Some(Gesture::G2),
            3 => Some(Gesture::G3),
            4 => Some(Gesture::G4),
            _ => None,
        }
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.class())
    }
}
