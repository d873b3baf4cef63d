//! Leg-gesture recognition from an ankle-worn IMU.
//!
//! The pipeline runs from raw six-channel samples ([`imu`]) through
//! overlap-based window labeling ([`labeling`]) to a compact convolutional
//! classifier ([`nn`], [`training`]) that is deployed in a memory-budgeted
//! streaming engine ([`runtime`]). Confirmed gestures drive a robotic-hand
//! state machine over a framed command link ([`control`]). Classical
//! baselines ([`baselines`]) and the cross-subject evaluation harness
//! ([`eval`]) reproduce the model studies.

pub mod baselines;
pub mod control;
pub mod eval;
pub mod gesture;
pub mod imu;
pub mod kv;
pub mod labeling;
pub mod nn;
pub mod runtime;
pub mod training;

pub use gesture::{Gesture, NUM_CLASSES};
