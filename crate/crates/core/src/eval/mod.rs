//! Cross-subject evaluation: fold plans, cross-validation, parameter sweeps,
//! confusion reports and end-to-end stream simulation.

pub mod e2e;
pub mod plot;
pub mod sweep;

use crate::baselines::{
    evaluate, BaselineConfig, BaselineError, BaselineModel, Metrics, ModelKind,
};
use crate::gesture::NUM_CLASSES;
use crate::imu::synth::{generate_synthetic, SynthError, SynthSpec};
use crate::labeling::{Dataset, LabeledRecording, LabeledWindow};
use crate::nn::ModelConfig;
use crate::training::{fit, TrainConfig, TrainError};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub use e2e::{
    expected_pairs, simulate_e2e, Confirmation, E2eConfig, E2eError, ExpectedPair, SessionReport,
};
pub use sweep::{sweep, SweepAxis, SweepPoint, SweepResults, SweepSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("invalid fold plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Label(#[from] crate::labeling::LabelError),
    #[error(transparent)]
    Data(#[from] crate::imu::DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub test_subject: u32,
    pub train_subjects: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Every subject is the test subject once; all others train.
    pub fn leave_one_out(subjects: &[u32]) -> Result<Self, EvalError> {
        Self::with_train_count(subjects, subjects.len().saturating_sub(1), 0)
    }

    /// Every subject is the test subject once, trained on `count` of the
    /// others drawn at random (seeded per test subject).
    pub fn with_train_count(subjects: &[u32], count: usize, seed: u64) -> Result<Self, EvalError> {
        if subjects.len() < 2 {
            return Err(EvalError::TooFewSubjects(subjects.len()));
        }
        if count == 0 || count >= subjects.len() {
            return Err(EvalError::Plan(format!(
                "train count must be in 1..={}, got {count}",
                subjects.len() - 1
            )));
        }
        let folds = subjects
            .iter()
            .map(|&test| {
                let others: Vec<u32> = subjects.iter().copied().filter(|&s| s != test).collect();
                let train_subjects = if count == others.len() {
                    others
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((test as u64) << 32));
                    let mut picked: Vec<u32> = sample(&mut rng, others.len(), count)
                        .into_iter()
                        .map(|i| others[i])
                        .collect();
                    picked.sort_unstable();
                    picked
                };
                Fold {
                    test_subject: test,
                    train_subjects,
                }
            })
            .collect();
        Ok(Self { folds })
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut tests: Vec<u32> = self.folds.iter().map(|f| f.test_subject).collect();
        tests.sort_unstable();
        if tests.windows(2).any(|w| w[0] == w[1]) {
            return Err(EvalError::Plan("a subject is tested more than once".into()));
        }
        if self
            .folds
            .iter()
            .any(|f| f.train_subjects.contains(&f.test_subject) || f.train_subjects.is_empty())
        {
            return Err(EvalError::Plan(
                "train set empty or containing the test subject".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Everything needed to train any model kind on one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test_subject: u32,
    pub train_windows: usize,
    pub test_windows: usize,
    pub metrics: Metrics,
    /// Per-fold caveats, e.g. classes missing from the test subject.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    /// Per class, over folds where the class is present.
    pub class_recall: Vec<MeanStd>,
    pub class_precision: Vec<MeanStd>,
}

impl FoldSummary {
    pub fn from_folds(folds: &[FoldResult]) -> Self {
        let collect = |f: &dyn Fn(&Metrics) -> f64| {
            mean_std(&folds.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        let per_class = |f: &dyn Fn(&crate::baselines::ClassMetrics) -> Option<f64>| {
            (0..NUM_CLASSES)
                .map(|c| {
                    let v: Vec<f64> = folds
                        .iter()
                        .filter_map(|r| f(&r.metrics.per_class[c]))
                        .collect();
                    mean_std(&v)
                })
                .collect()
        };
        Self {
            accuracy: collect(&|m| m.accuracy),
            macro_precision: collect(&|m| m.macro_precision),
            macro_recall: collect(&|m| m.macro_recall),
            macro_f1: collect(&|m| m.macro_f1),
            class_recall: per_class(&|c| c.recall),
            class_precision: per_class(&|c| c.precision),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResults {
    pub kind: ModelKind,
    pub folds: Vec<FoldResult>,
    pub summary: FoldSummary,
}

impl FoldResults {
    /// `test_subject,accuracy,macro_precision,macro_recall,macro_f1` per fold.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("test_subject,accuracy,macro_precision,macro_recall,macro_f1\n");
        for f in &self.folds {
            let m = &f.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                f.test_subject, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }
}

/// Trains `kind` on `train` and scores it on `test`.
pub fn fit_and_evaluate(
    kind: ModelKind,
    k: usize,
    train: &[&LabeledWindow],
    test: &[&LabeledWindow],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Metrics, EvalError> {
    Ok(match kind {
        ModelKind::Nn => {
            let tc = TrainConfig {
                seed,
                model: ModelConfig {
                    k,
                    ..cfg.train.model
                },
                ..cfg.train
            };
            let (model, _) = fit(train, &tc)?;
            evaluate(&model, test)
        }
        _ => evaluate(
            &BaselineModel::fit(kind, train, &cfg.baselines, seed)?,
            test,
        ),
    })
}

fn run_fold(
    ds: &Dataset,
    kind: ModelKind,
    cfg: &ExperimentConfig,
    fold: &Fold,
) -> Result<FoldResult, EvalError> {
    let train = ds.select(&fold.train_subjects);
    let test = ds.select(&[fold.test_subject]);
    let seed = cfg.seed.wrapping_add(fold.test_subject as u64);
    let metrics = fit_and_evaluate(kind, ds.k, &train, &test, cfg, seed)?;
    let flags = metrics
        .notes
        .iter()
        .map(|n| format!("subject {}: {n}", fold.test_subject))
        .collect();
    log::info!(
        "{kind} fold test={} macro-F1 {:.4} accuracy {:.4}",
        fold.test_subject,
        metrics.macro_f1,
        metrics.accuracy
    );
    Ok(FoldResult {
        test_subject: fold.test_subject,
        train_windows: train.len(),
        test_windows: test.len(),
        metrics,
        flags,
    })
}

/// Runs every fold of `plan`. Fold seeds depend only on the test subject, so
/// running folds in parallel gives the same results.
pub fn cross_validate(
    ds: &Dataset,
    kind: ModelKind,
    cfg: &ExperimentConfig,
    plan: &FoldPlan,
    parallel: bool,
) -> Result<FoldResults, EvalError> {
    if ds.subjects.len() < 2 {
        return Err(EvalError::TooFewSubjects(ds.subjects.len()));
    }
    plan.validate()?;
    let folds: Vec<FoldResult> = if parallel {
        plan.folds
            .par_iter()
            .map(|f| run_fold(ds, kind, cfg, f))
            .collect::<Result<_, _>>()?
    } else {
        plan.folds
            .iter()
            .map(|f| run_fold(ds, kind, cfg, f))
            .collect::<Result<_, _>>()?
    };
    let summary = FoldSummary::from_folds(&folds);
    Ok(FoldResults {
        kind,
        folds,
        summary,
    })
}

/// Ten-second-framed recordings of `reps` single performances per gesture for
/// subjects `0..subjects`.
pub fn synthetic_cohort(
    subjects: u32,
    reps: usize,
    seed: u64,
) -> Result<Vec<LabeledRecording>, EvalError> {
    (0..subjects)
        .map(|s| {
            let (recording, labels) =
                generate_synthetic(&SynthSpec::balanced(s, reps), seed.wrapping_add(s as u64))?;
            Ok(LabeledRecording { recording, labels })
        })
        .collect()
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub raw: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub normalized: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionReport {
    pub fn from_metrics(m: &Metrics) -> Self {
        Self {
            raw: m.confusion,
            normalized: m.normalized_confusion(),
        }
    }

    fn csv<T: std::fmt::Display>(rows: &[[T; NUM_CLASSES]; NUM_CLASSES]) -> String {
        let mut s = String::from("true\\pred");
        for c in 0..NUM_CLASSES {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (r, row) in rows.iter().enumerate() {
            let _ = write!(s, "{r}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn raw_csv(&self) -> String {
        Self::csv(&self.raw)
    }

    pub fn normalized_csv(&self) -> String {
        Self::csv(&self.normalized)
    }
}

pub fn confusion_report<C: crate::baselines::Classifier + ?Sized>(
    model: &C,
    windows: &[&LabeledWindow],
) -> ConfusionReport {
    ConfusionReport::from_metrics(&evaluate(model, windows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leave_one_out_covers_each_subject_once() {
        let ids: Vec<u32> = (0..10).collect();
        let plan = FoldPlan::leave_one_out(&ids).unwrap();
        assert_eq!(plan.folds.len(), 10);
        plan.validate().unwrap();
        for f in &plan.folds {
            assert_eq!(f.train_subjects.len(), 9);
            assert!(!f.train_subjects.contains(&f.test_subject));
        }
        assert!(FoldPlan::leave_one_out(&[3]).is_err());
    }

    #[test]
    fn train_count_plan_is_seeded_subset() {
        let ids: Vec<u32> = (0..6).collect();
        let a = FoldPlan::with_train_count(&ids, 2, 7).unwrap();
        assert_eq!(a, FoldPlan::with_train_count(&ids, 2, 7).unwrap());
        a.validate().unwrap();
        assert!(a.folds.iter().all(|f| f.train_subjects.len() == 2));
        assert!(FoldPlan::with_train_count(&ids, 6, 0).is_err());
    }

    #[test]
    fn population_std() {
        let s = mean_std(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn confusion_csv_layout() {
        let mut raw = [[0; 5]; 5];
        raw[0][0] = 3;
        raw[1][0] = 1;
        raw[1][1] = 3;
        let r = ConfusionReport::from_metrics(&Metrics::from_confusion(raw));
        let csv = r.raw_csv();
        assert_eq!(csv.lines().next().unwrap(), "true\\pred,0,1,2,3,4");
        assert_eq!(csv.lines().nth(2).unwrap(), "1,1,3,0,0,0");
        assert_eq!(r.normalized[1][1], 0.75);
    }
}
