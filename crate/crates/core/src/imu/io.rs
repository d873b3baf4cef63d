//! File formats for recordings and ground-truth labels.
//!
//! * Recording CSV: header `t,ax,ay,az,gr,gp,gy`, one row per sample.
//! * Sidecar metadata: `key=value` text with `subject` and `rate`.
//! * Label CSV: header `gesture,t_start,t_end`, gesture in 1..=4.
//! * Binary log, little-endian: magic `AKL1`, rate (f32), sample count (u32),
//!   then `count × 7` f32 values in the CSV column order. Timestamps are
//!   narrowed to f32 in this format.

use super::{DataError, ImuSample, Recording};
use crate::gesture::Gesture;
use crate::kv::{KvError, KvMap};
use crate::labeling::{LabelError, LabelInterval, LabeledRecording};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const RECORDING_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gr", "gp", "gy"];
pub const LABEL_HEADER: [&str; 3] = ["gesture", "t_start", "t_end"];
pub const BINARY_LOG_MAGIC: [u8; 4] = *b"AKL1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected CSV header {found:?}, expected {expected:?}")]
    Header {
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("not a binary IMU log (bad magic)")]
    BadMagic,
    #[error("binary log truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), IoError> {
    let found: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != expected {
        return Err(IoError::Header {
            found,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    row: usize,
) -> Result<T, IoError> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| IoError::Row {
        row,
        msg: format!("cannot parse column {} value {raw:?}", idx + 1),
    })
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<ImuSample>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    check_header(&mut reader, &RECORDING_HEADER)?;
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let t: f64 = parse_field(&rec, 0, row)?;
        let mut ch = [0f32; 6];
        for (c, v) in ch.iter_mut().enumerate() {
            *v = parse_field(&rec, c + 1, row)?;
        }
        samples.push(ImuSample::new(
            t,
            [ch[0], ch[1], ch[2]],
            [ch[3], ch[4], ch[5]],
        ));
    }
    Ok(samples)
}

pub fn write_samples_csv<W: Write>(samples: &[ImuSample], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORDING_HEADER)?;
    for s in samples {
        let c = s.channels();
        w.write_record([
            s.t.to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
            c[3].to_string(),
            c[4].to_string(),
            c[5].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<LabelInterval>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    check_header(&mut reader, &LABEL_HEADER)?;
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let class: usize = parse_field(&rec, 0, row)?;
        let gesture = Gesture::from_class(class).ok_or_else(|| IoError::Row {
            row,
            msg: format!("gesture must be 1..=4, got {class}"),
        })?;
        labels.push(LabelInterval::new(
            gesture,
            parse_field(&rec, 1, row)?,
            parse_field(&rec, 2, row)?,
        )?);
    }
    Ok(labels)
}

pub fn write_labels_csv<W: Write>(labels: &[LabelInterval], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LABEL_HEADER)?;
    for l in labels {
        w.write_record([
            l.gesture.class().to_string(),
            l.t_s.to_string(),
            l.t_e.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sidecar(rec: &Recording) -> KvMap {
    let mut m = KvMap::default();
    m.insert("subject", rec.subject_id);
    m.insert("rate", rec.nominal_rate);
    m
}

/// Path of the metadata sidecar for a recording file: `<file>.meta`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".meta");
    p.into()
}

/// Writes `<path>` as CSV and `<path>.meta` with subject id and rate.
pub fn save_recording(rec: &Recording, path: &Path) -> Result<(), IoError> {
    write_samples_csv(rec.samples(), std::fs::File::create(path)?)?;
    std::fs::write(sidecar_path(path), sidecar(rec).render())?;
    Ok(())
}

/// Reads a recording CSV. Without a sidecar, `default_subject` and
/// `default_rate` are used.
pub fn load_recording(
    path: &Path,
    default_subject: u32,
    default_rate: f64,
) -> Result<Recording, IoError> {
    let samples = read_samples_csv(std::fs::File::open(path)?)?;
    let meta_path = sidecar_path(path);
    let (subject, rate) = if meta_path.exists() {
        let meta = KvMap::parse(&std::fs::read_to_string(meta_path)?)?;
        (
            meta.get("subject")?.unwrap_or(default_subject),
            meta.get("rate")?.unwrap_or(default_rate),
        )
    } else {
        (default_subject, default_rate)
    };
    Ok(Recording::new(subject, samples, rate)?)
}

pub fn save_labels(labels: &[LabelInterval], path: &Path) -> Result<(), IoError> {
    write_labels_csv(labels, std::fs::File::create(path)?)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelInterval>, IoError> {
    read_labels_csv(std::fs::File::open(path)?)
}

/// Path of the labels file for a recording: `<stem>.labels.csv`.
pub fn labels_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("labels.csv")
}

/// Loads every `<stem>.csv` recording in `dir` (sorted by name) with its
/// `<stem>.labels.csv`. A recording without a labels file gets no labels.
/// Recordings without a sidecar are numbered by their position.
pub fn load_dataset_dir(dir: &Path, default_rate: f64) -> Result<Vec<LabeledRecording>, IoError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".csv") && !name.ends_with(".labels.csv")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let recording = load_recording(p, i as u32, default_rate)?;
            let lp = labels_path(p);
            let labels = if lp.exists() {
                load_labels(&lp)?
            } else {
                log::warn!("{} has no labels file", p.display());
                Vec::new()
            };
            Ok(LabeledRecording { recording, labels })
        })
        .collect()
}

pub fn encode_binary_log(rec: &Recording) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + rec.len() * 28);
    out.extend_from_slice(&BINARY_LOG_MAGIC);
    out.extend_from_slice(&(rec.nominal_rate as f32).to_le_bytes());
    out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
    for s in rec.samples() {
        out.extend_from_slice(&(s.t as f32).to_le_bytes());
        for v in s.channels() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_binary_log(bytes: &[u8], subject_id: u32) -> Result<Recording, IoError> {
    if bytes.len() < 12 {
        return Err(IoError::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    if bytes[..4] != BINARY_LOG_MAGIC {
        return Err(IoError::BadMagic);
    }
    let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let rate = f32_at(4) as f64;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + count * 28;
    if bytes.len() != expected {
        return Err(IoError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let samples = (0..count)
        .map(|i| {
            let base = 12 + i * 28;
            let v: Vec<f32> = (0..7).map(|j| f32_at(base + 4 * j)).collect();
            ImuSample::new(v[0] as f64, [v[1], v[2], v[3]], [v[4], v[5], v[6]])
        })
        .collect();
    Ok(Recording::new(subject_id, samples, rate)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_recording() -> Recording {
        let samples = (0..50)
            .map(|i| {
                let x = i as f32 * 0.37 - 3.1;
                ImuSample::new(
                    i as f64 * 0.01,
                    [x, 9.81 - x, 1.0 / 3.0],
                    [-x / 7.0, 0.1, x * x],
                )
            })
            .collect();
        Recording::new(4, samples, 100.0).unwrap()
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let rec = sample_recording();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s4.csv");
        save_recording(&rec, &path).unwrap();
        let back = load_recording(&path, 0, 50.0).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn missing_sidecar_uses_defaults() {
        let rec = sample_recording();
        let mut buf = Vec::new();
        write_samples_csv(rec.samples(), &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        std::fs::write(&path, buf).unwrap();
        let back = load_recording(&path, 9, 100.0).unwrap();
        assert_eq!(back.subject_id, 9);
    }

    #[test]
    fn dataset_dir_pairs_labels_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample_recording();
        let labels = vec![LabelInterval::new(Gesture::G2, 0.1, 0.3).unwrap()];
        save_recording(&rec, &dir.path().join("b.csv")).unwrap();
        save_labels(&labels, &labels_path(&dir.path().join("b.csv"))).unwrap();
        std::fs::write(
            dir.path().join("a.csv"),
            "t,ax,ay,az,gr,gp,gy\n0,0,0,0,0,0,0\n",
        )
        .unwrap();
        let all = load_dataset_dir(dir.path(), 50.0).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].recording.subject_id, 0);
        assert!(all[0].labels.is_empty());
        assert_eq!(all[1].recording, rec);
        assert_eq!(all[1].labels, labels);
    }

    #[test]
    fn bad_header_and_rows() {
        let err = read_samples_csv("t,ax,ay\n0,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Header { .. }));
        let err = read_samples_csv("t,ax,ay,az,gr,gp,gy\n0,1,2,x,4,5,6\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Row { row: 2, .. }));
        let err = read_labels_csv("gesture,t_start,t_end\n7,0,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::Row { .. }));
    }

    #[test]
    fn labels_round_trip() {
        let labels = vec![
            LabelInterval::new(Gesture::G1, 1.25, 2.0).unwrap(),
            LabelInterval::new(Gesture::G4, 3.5, 4.125).unwrap(),
        ];
        let mut buf = Vec::new();
        write_labels_csv(&labels, &mut buf).unwrap();
        assert_eq!(read_labels_csv(buf.as_slice()).unwrap(), labels);
    }

    #[test]
    fn binary_log_round_trip_and_errors() {
        let rec = sample_recording();
        let bytes = encode_binary_log(&rec);
        assert_eq!(bytes.len(), 12 + 50 * 28);
        let back = decode_binary_log(&bytes, 4).unwrap();
        for (a, b) in back.samples().iter().zip(rec.samples()) {
            assert_eq!(a.acc, b.acc);
            assert_eq!(a.gyro, b.gyro);
            assert_eq!(a.t, b.t as f32 as f64);
        }
        assert!(matches!(
            decode_binary_log(&bytes[..bytes.len() - 3], 4),
            Err(IoError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_binary_log(&bad, 4), Err(IoError::BadMagic)));
    }
}
