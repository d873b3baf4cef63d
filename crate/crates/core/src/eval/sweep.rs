//! One cross-validation per grid point along a single axis.

use super::{cross_validate, EvalError, ExperimentConfig, FoldPlan, MeanStd};
use crate::baselines::ModelKind;
use crate::imu::resample;
use crate::labeling::{build_dataset, LabeledRecording, OverlapConfig, WindowingConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// Window length in seconds.
    WindowDuration,
    /// Minimum overlap for a gesture label.
    Sigma,
    /// Sampling rate in Hz, reached by decimating the source recordings.
    Frequency,
    /// Number of training subjects per fold.
    TrainSubjectCount,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::WindowDuration => "duration",
            SweepAxis::Sigma => "sigma",
            SweepAxis::Frequency => "frequency",
            SweepAxis::TrainSubjectCount => "subjects",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duration" => Ok(SweepAxis::WindowDuration),
            "sigma" => Ok(SweepAxis::Sigma),
            "frequency" => Ok(SweepAxis::Frequency),
            "subjects" => Ok(SweepAxis::TrainSubjectCount),
            _ => Err(format!(
                "unknown sweep axis {s:?} (duration, sigma, frequency, subjects)"
            )),
        }
    }
}

fn steps(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Run only the first `n` folds of each point.
    pub max_folds: Option<usize>,
}

impl SweepSpec {
    /// The studied range for each axis; the subject axis runs from 1 to
    /// `subjects - 1`.
    pub fn default_for(axis: SweepAxis, subjects: usize) -> Self {
        let grid = match axis {
            SweepAxis::WindowDuration => steps(0.1, 1.5, 0.1),
            SweepAxis::Sigma => steps(0.1, 1.0, 0.1),
            SweepAxis::Frequency => steps(20.0, 200.0, 20.0),
            SweepAxis::TrainSubjectCount => (1..subjects.max(2)).map(|n| n as f64).collect(),
        };
        Self {
            axis,
            grid,
            max_folds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub k: usize,
    pub folds: usize,
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub axis: SweepAxis,
    pub kind: ModelKind,
    pub points: Vec<SweepPoint>,
    pub skipped: Vec<(f64, String)>,
}

impl SweepResults {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "value,k,folds,accuracy_mean,accuracy_std,macro_precision_mean,macro_precision_std,macro_recall_mean,macro_recall_std,macro_f1_mean,macro_f1_std\n",
        );
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                p.value,
                p.k,
                p.folds,
                p.accuracy.mean,
                p.accuracy.std,
                p.macro_precision.mean,
                p.macro_precision.std,
                p.macro_recall.mean,
                p.macro_recall.std,
                p.macro_f1.mean,
                p.macro_f1.std
            );
        }
        s
    }

    pub fn point(&self, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| (p.value - value).abs() < 1e-9)
    }
}

fn run_point(
    axis: SweepAxis,
    value: f64,
    recs: &[LabeledRecording],
    base: &WindowingConfig,
    kind: ModelKind,
    cfg: &ExperimentConfig,
    max_folds: Option<usize>,
    parallel: bool,
) -> Result<Result<SweepPoint, String>, EvalError> {
    let rate = recs[0].recording.nominal_rate;
    let mut wc = *base;
    let mut sources: Option<Vec<LabeledRecording>> = None;
    let mut train_count = None;
    match axis {
        SweepAxis::WindowDuration => {
            let k = (value * rate).round() as usize;
            if k < 2 || k < cfg.train.model.conv_kernel {
                return Ok(Err(format!("{k} samples per window is too short")));
            }
            wc.k = k;
        }
        SweepAxis::Sigma => match OverlapConfig::new(value, base.overlap.variant) {
            Ok(o) => wc.overlap = o,
            Err(e) => return Ok(Err(e.to_string())),
        },
        SweepAxis::Frequency => {
            if value > rate + 1e-9 {
                return Ok(Err(format!("{value} Hz exceeds the {rate} Hz source rate")));
            }
            let duration = base.k as f64 / rate;
            wc.k = (duration * value).round() as usize;
            wc.stride = ((base.stride as f64 * value / 100.0).round() as usize).max(1);
            if wc.k < cfg.train.model.conv_kernel {
                return Ok(Err(format!("{} samples per window is too short", wc.k)));
            }
            sources = Some(
                recs.iter()
                    .map(|r| {
                        Ok(LabeledRecording {
                            recording: resample(&r.recording, value)?,
                            labels: r.labels.clone(),
                        })
                    })
                    .collect::<Result<_, EvalError>>()?,
            );
        }
        SweepAxis::TrainSubjectCount => train_count = Some(value.round() as usize),
    }
    let ds = build_dataset(sources.as_deref().unwrap_or(recs), &wc, parallel)?;
    let ids = ds.subject_ids();
    let mut plan = match train_count {
        Some(n) => match FoldPlan::with_train_count(&ids, n, cfg.seed) {
            Ok(p) => p,
            Err(e) => return Ok(Err(e.to_string())),
        },
        None => FoldPlan::leave_one_out(&ids)?,
    };
    if let Some(n) = max_folds {
        plan.folds.truncate(n.max(1));
    }
    let results = match cross_validate(&ds, kind, cfg, &plan, parallel) {
        Ok(r) => r,
        Err(e @ (EvalError::Train(_) | EvalError::Baseline(_))) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e),
    };
    let s = results.summary;
    Ok(Ok(SweepPoint {
        value,
        k: wc.k,
        folds: results.folds.len(),
        accuracy: s.accuracy,
        macro_precision: s.macro_precision,
        macro_recall: s.macro_recall,
        macro_f1: s.macro_f1,
    }))
}

/// Runs every grid point. Points do not share state, so results do not depend
/// on grid order.
pub fn sweep(
    spec: &SweepSpec,
    recs: &[LabeledRecording],
    base: &WindowingConfig,
    kind: ModelKind,
    cfg: &ExperimentConfig,
    parallel: bool,
) -> Result<SweepResults, EvalError> {
    if spec.grid.is_empty() {
        return Err(EvalError::Plan("empty sweep grid".into()));
    }
    if recs.is_empty() {
        return Err(EvalError::TooFewSubjects(0));
    }
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &value in &spec.grid {
        match run_point(
            spec.axis,
            value,
            recs,
            base,
            kind,
            cfg,
            spec.max_folds,
            parallel,
        )? {
            Ok(p) => {
                log::info!("{} = {value}: macro-F1 {:.4}", spec.axis, p.macro_f1.mean);
                points.push(p);
            }
            Err(note) => {
                log::warn!("{} = {value} skipped: {note}", spec.axis);
                skipped.push((value, note));
            }
        }
    }
    Ok(SweepResults {
        axis: spec.axis,
        kind,
        points,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let d = SweepSpec::default_for(SweepAxis::WindowDuration, 10);
        assert_eq!(d.grid.len(), 15);
        let ks: Vec<usize> = d
            .grid
            .iter()
            .map(|v| (v * 100.0_f64).round() as usize)
            .collect();
        assert_eq!(ks.first(), Some(&10));
        assert_eq!(ks.last(), Some(&150));
        assert_eq!(
            SweepSpec::default_for(SweepAxis::Sigma, 10).grid,
            steps(0.1, 1.0, 0.1)
        );
        assert_eq!(
            SweepSpec::default_for(SweepAxis::Frequency, 10).grid.len(),
            10
        );
        assert_eq!(
            SweepSpec::default_for(SweepAxis::TrainSubjectCount, 10)
                .grid
                .len(),
            9
        );
        assert_eq!(steps(0.1, 0.3, 0.1), vec![0.1, 0.2, 0.3]);
        for a in ["duration", "sigma", "frequency", "subjects"] {
            assert_eq!(a.parse::<SweepAxis>().unwrap().to_string(), a);
        }
    }
}
