//! Window labeling: how much of a gesture's ground-truth interval a window
//! covers, and the resulting supervised `(window, class)` pairs.

use crate::gesture::{Gesture, NUM_CLASSES};
use crate::imu::{make_windows, DataError, NormalizationConstants, Recording, Window};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("interval [{start}, {end}] is empty or inverted")]
    EmptyInterval { start: f64, end: f64 },
    #[error("sigma must lie in (0, 1], got {0}")]
    Sigma(f64),
    #[error("label intervals overlap: {0} and {1}")]
    Overlapping(usize, usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Ground-truth interval during which a gesture was performed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub gesture: Gesture,
    pub t_s: f64,
    pub t_e: f64,
}

impl LabelInterval {
    pub fn new(gesture: Gesture, t_s: f64, t_e: f64) -> Result<Self, LabelError> {
        if !(t_s < t_e) || !t_s.is_finite() || !t_e.is_finite() {
            return Err(LabelError::EmptyInterval {
                start: t_s,
                end: t_e,
            });
        }
        let duration = t_e - t_s;
        if !(0.3..=2.0).contains(&duration) {
            log::warn!("{gesture} interval of {duration:.3}s is outside the usual 0.3-2.0s");
        }
        Ok(Self { gesture, t_s, t_e })
    }

    pub fn duration(&self) -> f64 {
        self.t_e - self.t_s
    }
}

/// Denominator used by [`overlap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapVariant {
    /// Intersection over the gesture's own duration: 1 exactly when the
    /// gesture lies inside the window.
    Coverage,
    /// Intersection over union.
    Iou,
}

impl fmt::Display for OverlapVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapVariant::Coverage => "coverage",
            OverlapVariant::Iou => "iou",
        })
    }
}

impl FromStr for OverlapVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coverage" => Ok(OverlapVariant::Coverage),
            "iou" => Ok(OverlapVariant::Iou),
            other => Err(format!("unknown overlap variant {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub sigma: f64,
    pub variant: OverlapVariant,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            variant: OverlapVariant::Coverage,
        }
    }
}

impl OverlapConfig {
    pub fn new(sigma: f64, variant: OverlapVariant) -> Result<Self, LabelError> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(LabelError::Sigma(sigma));
        }
        Ok(Self { sigma, variant })
    }
}

/// Fraction relating a window's time extent to a gesture's interval.
///
/// Both variants return exactly 0 when the intervals meet in at most a point.
/// `Coverage` returns exactly 1 if and only if the gesture lies inside the
/// window; `Iou` returns exactly 1 if and only if the intervals coincide.
pub fn overlap(
    window: (f64, f64),
    gesture: (f64, f64),
    variant: OverlapVariant,
) -> Result<f64, LabelError> {
    let (ws, we) = window;
    let (gs, ge) = gesture;
    if !(gs < ge) {
        return Err(LabelError::EmptyInterval { start: gs, end: ge });
    }
    if !(ws < we) {
        return Err(LabelError::EmptyInterval { start: ws, end: we });
    }
    if ge <= ws || we <= gs {
        return Ok(0.0);
    }
    let score = match variant {
        OverlapVariant::Coverage => {
            if ws <= gs && ge <= we {
                return Ok(1.0);
            }
            (ge.min(we) - gs.max(ws)) / (ge - gs)
        }
        OverlapVariant::Iou => {
            if ws == gs && we == ge {
                return Ok(1.0);
            }
            (ge.min(we) - gs.max(ws)) / (ge.max(we) - gs.min(ws))
        }
    };
    // Rounding must not turn a partial overlap into one of the exact endpoints.
    Ok(score.clamp(f64::MIN_POSITIVE, 1.0f64.next_down()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub subject_id: u32,
    pub window: Window,
    /// 0 for "no gesture", otherwise the gesture's class (1..=4).
    pub class: usize,
    /// Best overlap score over all intervals, whether or not it reached sigma.
    pub overlap_score: f64,
}

/// Labels `window` with the gesture of maximal overlap when that overlap
/// reaches `cfg.sigma`; ties go to the interval that starts first.
pub fn label_window(
    subject_id: u32,
    window: Window,
    labels: &[LabelInterval],
    cfg: &OverlapConfig,
) -> Result<LabeledWindow, LabelError> {
    let mut best: Option<(f64, &LabelInterval)> = None;
    for label in labels {
        let score = overlap(
            (window.t_start, window.t_end),
            (label.t_s, label.t_e),
            cfg.variant,
        )?;
        best = match best {
            Some((s, l)) if s > score || (s == score && l.t_s <= label.t_s) => Some((s, l)),
            _ => Some((score, label)),
        };
    }
    let (class, overlap_score) = match best {
        Some((score, label)) if score >= cfg.sigma => (label.gesture.class(), score),
        Some((score, _)) => (0, score),
        None => (0, 0.0),
    };
    Ok(LabeledWindow {
        subject_id,
        window,
        class,
        overlap_score,
    })
}

/// Checks that label intervals are pairwise disjoint (touching is allowed).
pub fn validate_labels(labels: &[LabelInterval]) -> Result<(), LabelError> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].t_s.total_cmp(&labels[b].t_s));
    for pair in order.windows(2) {
        if labels[pair[1]].t_s < labels[pair[0]].t_e {
            return Err(LabelError::Overlapping(pair[0], pair[1]));
        }
    }
    Ok(())
}

/// Windowing parameters shared by dataset construction and the sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub k: usize,
    pub stride: usize,
    pub overlap: OverlapConfig,
    pub normalization: NormalizationConstants,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            k: 60,
            stride: 1,
            overlap: OverlapConfig::default(),
            normalization: NormalizationConstants::default(),
        }
    }
}

/// A recording paired with its ground-truth intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub recording: Recording,
    pub labels: Vec<LabelInterval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectWindows {
    pub subject_id: u32,
    pub windows: Vec<LabeledWindow>,
}

/// Labeled windows grouped by subject, in ascending subject id and then
/// ascending start index (recordings of the same subject in input order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub k: usize,
    pub rate: f64,
    pub overlap: Option<OverlapConfig>,
    pub subjects: Vec<SubjectWindows>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.subjects.iter().map(|s| s.windows.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        self.subjects.iter().map(|s| s.subject_id).collect()
    }

    pub fn subject(&self, id: u32) -> Option<&SubjectWindows> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn windows(&self) -> impl Iterator<Item = &LabeledWindow> {
        self.subjects.iter().flat_map(|s| s.windows.iter())
    }

    /// Windows of the given subjects, in dataset order.
    pub fn select(&self, ids: &[u32]) -> Vec<&LabeledWindow> {
        self.subjects
            .iter()
            .filter(|s| ids.contains(&s.subject_id))
            .flat_map(|s| s.windows.iter())
            .collect()
    }

    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        class_histogram(self.windows())
    }
}

pub fn class_histogram<'a>(
    windows: impl IntoIterator<Item = &'a LabeledWindow>,
) -> [usize; NUM_CLASSES] {
    let mut h = [0; NUM_CLASSES];
    for w in windows {
        h[w.class] += 1;
    }
    h
}

fn label_subject(
    subject_id: u32,
    recs: &[&LabeledRecording],
    cfg: &WindowingConfig,
) -> Result<SubjectWindows, LabelError> {
    let mut windows = Vec::new();
    for rec in recs {
        validate_labels(&rec.labels)?;
        for w in make_windows(&rec.recording, cfg.k, cfg.stride, &cfg.normalization)? {
            windows.push(label_window(subject_id, w, &rec.labels, &cfg.overlap)?);
        }
    }
    Ok(SubjectWindows {
        subject_id,
        windows,
    })
}

/// Windows and labels every recording. With `parallel` the per-subject work
/// is spread over the rayon pool; the result is identical either way.
pub fn build_dataset(
    recs: &[LabeledRecording],
    cfg: &WindowingConfig,
    parallel: bool,
) -> Result<Dataset, LabelError> {
    let mut ids: Vec<u32> = recs.iter().map(|r| r.recording.subject_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let groups: Vec<(u32, Vec<&LabeledRecording>)> = ids
        .iter()
        .map(|&id| {
            (
                id,
                recs.iter()
                    .filter(|r| r.recording.subject_id == id)
                    .collect(),
            )
        })
        .collect();
    let subjects: Vec<SubjectWindows> = if parallel {
        groups
            .par_iter()
            .map(|(id, rs)| label_subject(*id, rs, cfg))
            .collect::<Result<_, _>>()?
    } else {
        groups
            .iter()
            .map(|(id, rs)| label_subject(*id, rs, cfg))
            .collect::<Result<_, _>>()?
    };
    let rate = recs.first().map_or(0.0, |r| r.recording.nominal_rate);
    let dataset = Dataset {
        k: cfg.k,
        rate,
        overlap: Some(cfg.overlap),
        subjects,
    };
    log::info!(
        "dataset: {} windows over {} subjects, class histogram {:?}",
        dataset.len(),
        dataset.subjects.len(),
        dataset.histogram()
    );
    Ok(dataset)
}
