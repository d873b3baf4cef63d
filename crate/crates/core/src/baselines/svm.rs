//! One-vs-rest linear SVM trained by dual coordinate descent on the hinge
//! loss. The bias is learned as the weight of a constant feature.

use super::{present_classes, training_matrix, BaselineError, Classifier};
use crate::labeling::LabeledWindow;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub max_passes: usize,
    /// Stop when the projected-gradient spread of a pass falls below this.
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_passes: 100,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryFit {
    pub class: usize,
    pub passes: usize,
    pub converged: bool,
    /// Primal objective `½‖w‖² + C Σ max(0, 1 − y w·x)`.
    pub objective: f64,
    pub hinge_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub classes: Vec<usize>,
    /// Per class: `d` weights followed by the bias.
    pub weights: Vec<Vec<f32>>,
    pub fits: Vec<BinaryFit>,
}

fn dot_aug(w: &[f64], x: &[f32]) -> f64 {
    let d = x.len();
    w[..d]
        .iter()
        .zip(x)
        .map(|(a, &b)| a * b as f64)
        .sum::<f64>()
        + w[d]
}

fn fit_binary(
    xs: &[&[f32]],
    y: &[f64],
    cfg: &SvmConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, usize, bool) {
    let d = xs[0].len();
    let mut w = vec![0.0f64; d + 1];
    let mut alpha = vec![0.0f64; xs.len()];
    let qii: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for pass in 1..=cfg.max_passes {
        order.shuffle(rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let g = y[i] * dot_aug(&w, xs[i]) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == cfg.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, cfg.c);
                let step = (alpha[i] - old) * y[i];
                for (wj, &xj) in w[..d].iter_mut().zip(xs[i]) {
                    *wj += step * xj as f64;
                }
                w[d] += step;
            }
        }
        if pg_max - pg_min < cfg.tolerance {
            return (w, pass, true);
        }
    }
    (w, cfg.max_passes, false)
}

impl LinearSvm {
    pub fn fit(
        windows: &[&LabeledWindow],
        cfg: &SvmConfig,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        if !(cfg.c > 0.0) || cfg.max_passes == 0 {
            return Err(BaselineError::Config(
                "SVM needs C > 0 and at least one pass".into(),
            ));
        }
        let (xs, ys) = training_matrix(windows, 2)?;
        let classes = present_classes(&ys);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut fits = Vec::new();
        for &class in &classes {
            let y: Vec<f64> = ys
                .iter()
                .map(|&v| if v == class { 1.0 } else { -1.0 })
                .collect();
            let (w, passes, converged) = fit_binary(&xs, &y, cfg, &mut rng);
            let hinge: f64 = xs
                .iter()
                .zip(&y)
                .map(|(x, yi)| (1.0 - yi * dot_aug(&w, x)).max(0.0))
                .sum();
            let norm: f64 = w.iter().map(|v| v * v).sum();
            let objective = 0.5 * norm + cfg.c * hinge;
            if !converged {
                log::warn!("svm class {class}: no convergence in {passes} passes, objective {objective:.4}");
            }
            fits.push(BinaryFit {
                class,
                passes,
                converged,
                objective,
                hinge_loss: hinge,
            });
            weights.push(w.iter().map(|&v| v as f32).collect());
        }
        Ok(Self {
            classes,
            weights,
            fits,
        })
    }

    pub fn decision(&self, x: &[f32]) -> Vec<f32> {
        let d = x.len();
        self.weights
            .iter()
            .map(|w| w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + w[d])
            .collect()
    }

    /// Weight-vector count, i.e. `classes × (features + 1)`.
    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    /// Class count (u8), then per class its id (u8) and `d + 1` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.classes.len() as u8];
        for (c, w) in self.classes.iter().zip(&self.weights) {
            out.push(*c as u8);
            for v in w {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl Classifier for LinearSvm {
    fn name(&self) -> &str {
        "svm"
    }

    fn predict(&self, x: &[f32]) -> usize {
        self.classes[crate::nn::argmax(&self.decision(x))]
    }

    fn serialized_size(&self) -> usize {
        self.to_bytes().len()
    }
}
