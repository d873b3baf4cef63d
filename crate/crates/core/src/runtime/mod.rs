//! Deployment side: weight bundles, memory accounting, streaming inference
//! and gesture triggering.

pub mod budget;
pub mod bundle;
pub mod detect;
pub mod stream;

pub use budget::{budget_check, budget_for_config, MemoryReport, MEMORY_LIMIT_BYTES};
pub use bundle::{export_const_arrays, export_weights, import_weights, BundleError, WeightBundle};
pub use detect::{
    detect, double_gesture_gate, DetectionEvent, Detector, DoubleGestureGate, TriggerConfig,
};
pub use stream::{stream_classify, StreamMode, StreamSession};
