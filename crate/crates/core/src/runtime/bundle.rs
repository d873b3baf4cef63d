//! Weight bundle format, little-endian throughout:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 4 | magic `AKB1` |
//! | 4 | 2 | format version (1) |
//! | 6 | 2 | reserved, zero |
//! | 8 | 28 | u32 × 7: k, in_channels, conv_out_channels, conv_kernel, conv_stride, hidden, classes |
//! | 36 | 16 | f64 × 2: bn_epsilon, bn_momentum |
//! | 52 | 4·P | f32 tensors in [`TensorRole::ALL`] order |
//! | 52+4·P | 4 | CRC-32 (IEEE) of every preceding byte |
//!
//! The default model has P = 14,425, so its bundle is 57,756 bytes.

use crate::nn::{Model, ModelConfig, NnError, TensorRole};
use serde::Serialize;
use std::fmt::Write as _;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"AKB1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 52;
pub const CHECKSUM_LEN: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum BundleError {
    #[error("not a weight bundle (bad magic)")]
    BadMagic,
    #[error("unknown bundle version {0}")]
    UnknownVersion(u16),
    #[error("bundle size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("bundle checksum mismatch")]
    ChecksumMismatch,
    #[error("bundle config rejected: {0}")]
    Config(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub bytes: Vec<u8>,
}

impl WeightBundle {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn config(&self) -> Result<ModelConfig, BundleError> {
        read_header(&self.bytes)
    }
}

/// Exact bundle size for a config.
pub fn bundle_size(config: &ModelConfig) -> usize {
    HEADER_LEN + 4 * config.layer_counts().total() + CHECKSUM_LEN
}

pub fn export_weights(model: &Model<f32>) -> WeightBundle {
    let c = &model.config;
    let mut out = Vec::with_capacity(bundle_size(c));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for v in [
        c.k,
        c.in_channels,
        c.conv_out_channels,
        c.conv_kernel,
        c.conv_stride,
        c.hidden,
        c.classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.bn_epsilon.to_le_bytes());
    out.extend_from_slice(&c.bn_momentum.to_le_bytes());
    for role in TensorRole::ALL {
        for v in model.tensor(role) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    WeightBundle { bytes: out }
}

fn read_header(bytes: &[u8]) -> Result<ModelConfig, BundleError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(BundleError::BadMagic);
        }
        return Err(BundleError::SizeMismatch {
            expected: HEADER_LEN + CHECKSUM_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(BundleError::UnknownVersion(version));
    }
    let u =
        |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let config = ModelConfig {
        k: u(0),
        in_channels: u(1),
        conv_out_channels: u(2),
        conv_kernel: u(3),
        conv_stride: u(4),
        hidden: u(5),
        classes: u(6),
        bn_epsilon: f(36),
        bn_momentum: f(44),
    };
    config.validate()?;
    Ok(config)
}

/// Size of the bundle that starts at `bytes[0]`, read from its header.
pub fn bundle_len(bytes: &[u8]) -> Result<usize, BundleError> {
    Ok(bundle_size(&read_header(bytes)?))
}

/// Parses a bundle. Size is checked before the checksum, so a truncated file
/// reports a size mismatch.
pub fn import_weights(bytes: &[u8]) -> Result<Model<f32>, BundleError> {
    let config = read_header(bytes)?;
    let expected = bundle_size(&config);
    if bytes.len() != expected {
        return Err(BundleError::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let body = &bytes[..expected - CHECKSUM_LEN];
    let stored = u32::from_le_bytes(bytes[expected - CHECKSUM_LEN..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(BundleError::ChecksumMismatch);
    }
    let mut model = Model::<f32>::zeros(config)?;
    let mut off = HEADER_LEN;
    for role in TensorRole::ALL {
        for v in model.tensor_mut(role).iter_mut() {
            *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub array: String,
    pub role: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

/// Source-text rendering of the weights as constant float arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstArrayExport {
    pub source: String,
    pub manifest: Vec<ManifestEntry>,
}

impl ConstArrayExport {
    /// Manifest as CSV: `array,role,shape,offset,count`, shape joined by `x`.
    pub fn manifest_csv(&self) -> String {
        let mut s = String::from("array,role,shape,offset,count\n");
        for e in &self.manifest {
            let shape: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.array,
                e.role,
                shape.join("x"),
                e.offset,
                e.count
            );
        }
        s
    }
}

/// Renders every tensor as `static const float <name>[n] = {...};` with
/// 9 significant digits per literal, enough to round-trip any f32.
pub fn export_const_arrays(model: &Model<f32>, prefix: &str) -> ConstArrayExport {
    let c = &model.config;
    let mut source = String::new();
    let _ = writeln!(
        source,
        "// k={} in={} conv_out={} kernel={} stride={} hidden={} classes={} eps={:e} momentum={}",
        c.k,
        c.in_channels,
        c.conv_out_channels,
        c.conv_kernel,
        c.conv_stride,
        c.hidden,
        c.classes,
        c.bn_epsilon,
        c.bn_momentum
    );
    let mut manifest = Vec::new();
    let mut offset = 0;
    for role in TensorRole::ALL {
        let data = model.tensor(role);
        let array = format!("{prefix}_{}", role.name());
        let _ = writeln!(source, "static const float {array}[{}] = {{", data.len());
        for chunk in data.chunks(8) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:.8e}f")).collect();
            let _ = writeln!(source, "    {},", line.join(", "));
        }
        source.push_str("};\n");
        manifest.push(ManifestEntry {
            array,
            role: role.name(),
            shape: role.shape(c),
            offset,
            count: data.len(),
        });
        offset += data.len();
    }
    ConstArrayExport { source, manifest }
}

/// Parses the arrays back out of [`export_const_arrays`] text, in order.
pub fn parse_const_arrays(source: &str) -> Vec<(String, Vec<f32>)> {
    let mut out = Vec::new();
    let mut current: Option<(String, Vec<f32>)> = None;
    for line in source.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("static const float ") {
            let name = rest.split('[').next().unwrap_or("").to_string();
            current = Some((name, Vec::new()));
        } else if line.starts_with("};") {
            if let Some(done) = current.take() {
                out.push(done);
            }
        } else if let Some((_, values)) = current.as_mut() {
            for tok in line.split(',') {
                let tok = tok.trim().trim_end_matches('f');
                if let Ok(v) = tok.parse::<f32>() {
                    values.push(v);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::init_weights;

    fn model() -> Model<f32> {
        let mut m = init_weights(ModelConfig::default(), 7).unwrap();
        m.bn1.running_var[3] = 1.7;
        m.bn2.running_mean[0] = -0.25;
        m
    }

    #[test]
    fn default_bundle_size() {
        let b = export_weights(&model());
        assert_eq!(b.len(), 52 + 14_425 * 4 + 4);
        assert_eq!(b.len(), 57_756);
        assert!(b.len() < 60 * 1024);
        assert_eq!(b.config().unwrap(), ModelConfig::default());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = import_weights(&export_weights(&m).bytes).unwrap();
        for role in TensorRole::ALL {
            let a: Vec<u32> = m.tensor(role).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.tensor(role).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{}", role.name());
        }
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn load_errors_are_distinct() {
        let bytes = export_weights(&model()).bytes;
        assert!(matches!(
            import_weights(&bytes[..bytes.len() - 1]),
            Err(BundleError::SizeMismatch { .. })
        ));
        assert!(matches!(
            import_weights(&bytes[..10]),
            Err(BundleError::SizeMismatch { .. })
        ));
        let mut bad = bytes.clone();
        bad[100] ^= 0x10;
        assert_eq!(import_weights(&bad), Err(BundleError::ChecksumMismatch));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(import_weights(&bad), Err(BundleError::UnknownVersion(9)));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert_eq!(import_weights(&bad), Err(BundleError::BadMagic));
    }

    #[test]
    fn const_arrays_round_trip_through_text() {
        let m = model();
        let export = export_const_arrays(&m, "ankle");
        let parsed = parse_const_arrays(&export.source);
        assert_eq!(parsed.len(), 13);
        assert_eq!(export.manifest.len(), 13);
        assert_eq!(export.manifest[5].array, "ankle_fc1_weight");
        assert_eq!(export.manifest[5].shape, vec![64, 200]);
        for ((name, values), role) in parsed.iter().zip(TensorRole::ALL) {
            assert_eq!(name, &format!("ankle_{}", role.name()));
            let expect: Vec<u32> = m.tensor(role).iter().map(|v| v.to_bits()).collect();
            let got: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got, expect);
        }
        let total: usize = export.manifest.iter().map(|e| e.count).sum();
        assert_eq!(total, 14_425);
        assert!(export.manifest_csv().lines().count() == 14);
    }
}
