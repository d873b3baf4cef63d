//! Classical comparison classifiers sharing the flattened-window features,
//! plus the metrics used to compare every classifier including the network.

pub mod dtw;
pub mod forest;
pub mod lda;
pub mod svm;

use crate::gesture::NUM_CLASSES;
use crate::labeling::LabeledWindow;
use crate::nn::{argmax, Model, Workspace};
use crate::runtime::bundle::bundle_size;
use crate::runtime::MEMORY_LIMIT_BYTES;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub use dtw::{dtw_distance, DtwConfig, DtwModel};
pub use forest::{ForestConfig, RandomForest};
pub use lda::{LdaConfig, LdaModel};
pub use svm::{LinearSvm, SvmConfig};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("need at least {need} classes, found {found}")]
    TooFewClasses { need: usize, found: usize },
    #[error("inconsistent feature length: {0} vs {1}")]
    FeatureLength(usize, usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("serialized model is {size} bytes, over the {limit}-byte budget")]
    OverBudget { size: usize, limit: usize },
    #[error("pooled covariance is not positive definite even after regularization")]
    Singular,
}

/// Anything that maps one flattened window to a class.
pub trait Classifier: Sync {
    fn name(&self) -> &str;

    fn predict(&self, x: &[f32]) -> usize;

    fn serialized_size(&self) -> usize;

    fn predict_all(&self, xs: &[&[f32]]) -> Vec<usize> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

impl Classifier for Model<f32> {
    fn name(&self) -> &str {
        "nn"
    }

    fn predict(&self, x: &[f32]) -> usize {
        let mut ws = Workspace::new(&self.config);
        self.predict_with(x, &mut ws)
    }

    fn serialized_size(&self) -> usize {
        bundle_size(&self.config)
    }

    fn predict_all(&self, xs: &[&[f32]]) -> Vec<usize> {
        let mut ws = Workspace::new(&self.config);
        xs.iter().map(|x| self.predict_with(x, &mut ws)).collect()
    }
}

impl Model<f32> {
    /// Eval-mode argmax; a non-finite forward pass predicts class 0.
    fn predict_with(&self, x: &[f32], ws: &mut Workspace<f32>) -> usize {
        match self.infer_into(x, ws) {
            Ok(()) => argmax(ws.probs()),
            Err(e) => {
                log::warn!("inference failed ({e}); predicting no-gesture");
                0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Nn,
    Lda,
    LinearSvm,
    RandomForest,
    Dtw,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Nn,
        ModelKind::Lda,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::Dtw,
    ];
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nn => "nn",
            ModelKind::Lda => "lda",
            ModelKind::LinearSvm => "svm",
            ModelKind::RandomForest => "rf",
            ModelKind::Dtw => "dtw",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model kind {s:?} (nn, lda, svm, rf, dtw)"))
    }
}

/// Baseline hyperparameters, one block per kind.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lda: LdaConfig,
    pub svm: SvmConfig,
    pub forest: ForestConfig,
    pub dtw: DtwConfig,
}

#[derive(Debug, Clone)]
pub enum BaselineModel {
    Lda(LdaModel),
    LinearSvm(LinearSvm),
    RandomForest(RandomForest),
    Dtw(DtwModel),
}

impl BaselineModel {
    pub fn fit(
        kind: ModelKind,
        windows: &[&LabeledWindow],
        cfg: &BaselineConfig,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        let m = match kind {
            ModelKind::Lda => BaselineModel::Lda(LdaModel::fit(windows, &cfg.lda)?),
            ModelKind::LinearSvm => {
                BaselineModel::LinearSvm(LinearSvm::fit(windows, &cfg.svm, seed)?)
            }
            ModelKind::RandomForest => {
                BaselineModel::RandomForest(RandomForest::fit(windows, &cfg.forest, seed)?)
            }
            ModelKind::Dtw => BaselineModel::Dtw(DtwModel::fit(windows, &cfg.dtw, seed)?),
            ModelKind::Nn => {
                return Err(BaselineError::Config(
                    "the network is not a baseline".into(),
                ))
            }
        };
        let size = m.serialized_size();
        if size > MEMORY_LIMIT_BYTES {
            return Err(BaselineError::OverBudget {
                size,
                limit: MEMORY_LIMIT_BYTES,
            });
        }
        Ok(m)
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            BaselineModel::Lda(m) => m,
            BaselineModel::LinearSvm(m) => m,
            BaselineModel::RandomForest(m) => m,
            BaselineModel::Dtw(m) => m,
        }
    }
}

impl Classifier for BaselineModel {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn predict(&self, x: &[f32]) -> usize {
        self.inner().predict(x)
    }

    fn serialized_size(&self) -> usize {
        self.inner().serialized_size()
    }
}

/// Features and labels pulled out of a window list, with sanity checks
/// shared by every fit.
pub(crate) fn training_matrix<'a>(
    windows: &[&'a LabeledWindow],
    min_classes: usize,
) -> Result<(Vec<&'a [f32]>, Vec<usize>), BaselineError> {
    let first = windows.first().ok_or(BaselineError::EmptyDataset)?;
    let d = first.window.values().len();
    let mut xs = Vec::with_capacity(windows.len());
    let mut ys = Vec::with_capacity(windows.len());
    for w in windows {
        if w.window.values().len() != d {
            return Err(BaselineError::FeatureLength(d, w.window.values().len()));
        }
        xs.push(w.window.values());
        ys.push(w.class);
    }
    let found = present_classes(&ys).len();
    if found < min_classes {
        return Err(BaselineError::TooFewClasses {
            need: min_classes,
            found,
        });
    }
    Ok((xs, ys))
}

pub(crate) fn present_classes(ys: &[usize]) -> Vec<usize> {
    let mut seen = [false; NUM_CLASSES];
    for &y in ys {
        seen[y] = true;
    }
    (0..NUM_CLASSES).filter(|&c| seen[c]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    pub predicted: usize,
    /// `None` when the class is absent from the ground truth.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rows are true classes, columns predictions.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    /// Averages over classes present in the ground truth.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub notes: Vec<String>,
}

impl Metrics {
    pub fn from_confusion(confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let mut per_class = Vec::with_capacity(NUM_CLASSES);
        let mut notes = Vec::new();
        for c in 0..NUM_CLASSES {
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum();
            let tp = confusion[c][c] as f64;
            let (precision, recall, f1) = if support == 0 {
                notes.push(format!(
                    "class {c} absent from ground truth; excluded from macro averages"
                ));
                (None, None, None)
            } else {
                let p = if predicted == 0 {
                    0.0
                } else {
                    tp / predicted as f64
                };
                let r = tp / support as f64;
                let f = if p + r == 0.0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                };
                (Some(p), Some(r), Some(f))
            };
            per_class.push(ClassMetrics {
                class: c,
                support,
                predicted,
                precision,
                recall,
                f1,
            });
        }
        let mean = |f: fn(&ClassMetrics) -> Option<f64>| {
            let v: Vec<f64> = per_class.iter().filter_map(f).collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        Self {
            confusion,
            accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_f1: mean(|m| m.f1),
            per_class,
            notes,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Row-normalized confusion matrix; all-zero rows stay zero.
    pub fn normalized_confusion(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (r, row) in self.confusion.iter().enumerate() {
            let sum: usize = row.iter().sum();
            if sum > 0 {
                for c in 0..NUM_CLASSES {
                    out[r][c] = row[c] as f64 / sum as f64;
                }
            }
        }
        out
    }
}

pub fn confusion_from(truth: &[usize], predicted: &[usize]) -> [[usize; NUM_CLASSES]; NUM_CLASSES] {
    let mut m = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (&t, &p) in truth.iter().zip(predicted) {
        m[t][p] += 1;
    }
    m
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, windows: &[&LabeledWindow]) -> Metrics {
    let xs: Vec<&[f32]> = windows.iter().map(|w| w.window.values()).collect();
    let truth: Vec<usize> = windows.iter().map(|w| w.class).collect();
    Metrics::from_confusion(confusion_from(&truth, &model.predict_all(&xs)))
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::imu::Window;
    use crate::labeling::LabeledWindow;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    pub fn lw(class: usize, values: Vec<f32>) -> LabeledWindow {
        LabeledWindow {
            subject_id: 0,
            window: Window::from_values(0, 0.0, 0.0, values),
            class,
            overlap_score: 1.0,
        }
    }

    /// `n` points per class around per-class means `centers[c]` in `d` dims.
    pub fn blobs(
        centers: &[(usize, f32)],
        n: usize,
        d: usize,
        sd: f32,
        seed: u64,
    ) -> Vec<LabeledWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut out = Vec::new();
        for _ in 0..n {
            for &(class, center) in centers {
                let values = (0..d)
                    .map(|j| {
                        let base = if j % centers.len() == class % centers.len() {
                            center
                        } else {
                            0.0
                        };
                        base + noise.sample(&mut rng)
                    })
                    .collect();
                out.push(lw(class, values));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_class_arithmetic() {
        let mut cm = [[0; 5]; 5];
        cm[0][0] = 8;
        cm[0][1] = 2;
        cm[1][0] = 1;
        cm[1][1] = 9;
        let m = Metrics::from_confusion(cm);
        assert!((m.per_class[0].precision.unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!((m.per_class[0].recall.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(m.per_class[3].f1, None);
        assert_eq!(m.notes.len(), 3);
        assert!((m.accuracy - 0.85).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let m = Metrics::from_confusion(confusion_from(&truth, &truth));
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(m.confusion[r][c] > 0, r == c);
            }
        }
        let zeros = vec![0; 50];
        let m = Metrics::from_confusion(confusion_from(&truth, &zeros));
        assert!((m.accuracy - 0.2).abs() < 1e-12);
        assert_eq!(m.per_class[2].precision, Some(0.0));
        assert_eq!(m.total(), 50);
        let norm = m.normalized_confusion();
        for row in norm {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn model_kind_parses() {
        for k in ModelKind::ALL {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
        }
        assert!("knn".parse::<ModelKind>().is_err());
    }
}
