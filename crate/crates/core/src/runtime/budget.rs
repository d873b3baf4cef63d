//! Memory accounting against the device's dynamic-memory limit.

use super::bundle::WeightBundle;
use super::detect::{DetectionEvent, Detector, DoubleGestureGate, GATE_CAPACITY};
use crate::imu::CHANNELS;
use crate::nn::ModelConfig;
use serde::Serialize;

/// 90 KB.
pub const MEMORY_LIMIT_BYTES: usize = 92_160;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryItem {
    pub name: &'static str,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub limit_bytes: usize,
    pub items: Vec<MemoryItem>,
    pub total_bytes: usize,
    pub pass: bool,
}

impl MemoryReport {
    pub fn item(&self, name: &str) -> Option<usize> {
        self.items.iter().find(|i| i.name == name).map(|i| i.bytes)
    }

    pub fn headroom(&self) -> i64 {
        self.limit_bytes as i64 - self.total_bytes as i64
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            s.push_str(&format!("{:<12} {:>8} B\n", i.name, i.bytes));
        }
        s.push_str(&format!(
            "{:<12} {:>8} B of {} B: {}\n",
            "total",
            self.total_bytes,
            self.limit_bytes,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        s
    }
}

/// Weight tensors as resident f32 arrays.
pub fn weight_bytes(config: &ModelConfig) -> usize {
    config.layer_counts().total() * 4
}

/// Upper bound on inference scratch: every activation buffer of the forward
/// pass held at once (input window, conv output, hidden, logits,
/// probabilities).
pub fn workspace_bytes(config: &ModelConfig) -> usize {
    (config.input_len() + config.flat() + config.hidden + 2 * config.classes) * 4
}

/// Double-length ring buffer of normalized samples.
pub fn ring_bytes(config: &ModelConfig) -> usize {
    2 * config.k * CHANNELS * 4
}

/// Detector plus a full double-gesture gate.
pub fn trigger_state_bytes() -> usize {
    std::mem::size_of::<Detector>()
        + std::mem::size_of::<DoubleGestureGate>()
        + GATE_CAPACITY * std::mem::size_of::<DetectionEvent>()
}

/// Itemized accounting for a model config plus one streaming session.
pub fn budget_for_config(config: &ModelConfig) -> MemoryReport {
    let items = vec![
        MemoryItem {
            name: "weights",
            bytes: weight_bytes(config),
        },
        MemoryItem {
            name: "workspace",
            bytes: workspace_bytes(config),
        },
        MemoryItem {
            name: "ring_buffer",
            bytes: ring_bytes(config),
        },
        MemoryItem {
            name: "trigger",
            bytes: trigger_state_bytes(),
        },
    ];
    let total_bytes = items.iter().map(|i| i.bytes).sum();
    MemoryReport {
        limit_bytes: MEMORY_LIMIT_BYTES,
        items,
        total_bytes,
        pass: total_bytes <= MEMORY_LIMIT_BYTES,
    }
}

/// Accounting for a serialized bundle. An unreadable bundle fails with no
/// items.
pub fn budget_check(bundle: &WeightBundle) -> MemoryReport {
    match bundle.config() {
        Ok(config) => budget_for_config(&config),
        Err(e) => {
            log::error!("budget check on unreadable bundle: {e}");
            MemoryReport {
                limit_bytes: MEMORY_LIMIT_BYTES,
                items: Vec::new(),
                total_bytes: 0,
                pass: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_passes_with_headroom() {
        let r = budget_for_config(&ModelConfig::default());
        assert_eq!(r.item("weights"), Some(57_700));
        assert_eq!(r.item("workspace"), Some((360 + 200 + 64 + 10) * 4));
        assert_eq!(r.item("ring_buffer"), Some(2_880));
        assert!(r.pass);
        assert!(r.headroom() > 20_000);
    }

    #[test]
    fn wide_hidden_layer_fails() {
        let cfg = ModelConfig {
            hidden: 512,
            ..Default::default()
        };
        assert!(200 * 512 * 4 > MEMORY_LIMIT_BYTES);
        assert!(!budget_for_config(&cfg).pass);
    }

    #[test]
    fn empty_model_passes() {
        let cfg = ModelConfig {
            conv_out_channels: 0,
            hidden: 0,
            ..Default::default()
        };
        let r = budget_for_config(&cfg);
        assert!(r.pass);
        assert_eq!(r.item("weights"), Some(5 * 4));
    }
}
