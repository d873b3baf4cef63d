//! Linear discriminant analysis with a shared, ridge-regularized covariance.
//!
//! Only the folded discriminants are kept: for each class `w_c = Σ⁻¹ μ_c` and
//! `b_c = -½ μ_cᵀ Σ⁻¹ μ_c + ln π_c`, so prediction is `argmax_c w_c·x + b_c`.

use super::{present_classes, training_matrix, BaselineError, Classifier};
use crate::labeling::LabeledWindow;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Ridge added to the pooled covariance diagonal.
    pub lambda: f64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub classes: Vec<usize>,
    /// One row of `d` weights per class in `classes`.
    pub weights: Vec<Vec<f32>>,
    pub bias: Vec<f32>,
    /// Ridge actually applied.
    pub lambda: f64,
}

impl LdaModel {
    pub fn fit(windows: &[&LabeledWindow], cfg: &LdaConfig) -> Result<Self, BaselineError> {
        if !(cfg.lambda >= 0.0) {
            return Err(BaselineError::Config(format!(
                "lambda must be non-negative, got {}",
                cfg.lambda
            )));
        }
        let (xs, ys) = training_matrix(windows, 2)?;
        let classes = present_classes(&ys);
        let n = xs.len();
        let d = xs[0].len();

        let mut means = DMatrix::<f64>::zeros(classes.len(), d);
        let mut counts = vec![0usize; classes.len()];
        let slot = |y: usize| classes.iter().position(|&c| c == y).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            let s = slot(y);
            counts[s] += 1;
            for j in 0..d {
                means[(s, j)] += x[j] as f64;
            }
        }
        for s in 0..classes.len() {
            for j in 0..d {
                means[(s, j)] /= counts[s] as f64;
            }
        }
        let mut centered = DMatrix::<f64>::zeros(n, d);
        for (i, (x, &y)) in xs.iter().zip(&ys).enumerate() {
            let s = slot(y);
            for j in 0..d {
                centered[(i, j)] = x[j] as f64 - means[(s, j)];
            }
        }
        let dof = (n.saturating_sub(classes.len())).max(1) as f64;
        let pooled = centered.tr_mul(&centered) / dof;

        let regularize = |lambda: f64| {
            let mut m = pooled.clone();
            for j in 0..d {
                m[(j, j)] += lambda;
            }
            m.cholesky()
        };
        let (chol, lambda) = match regularize(cfg.lambda) {
            Some(c) => (c, cfg.lambda),
            None => {
                let fallback = LdaConfig::default().lambda.max(cfg.lambda * 10.0);
                log::warn!(
                    "pooled covariance is singular with lambda {}; retrying with {fallback}",
                    cfg.lambda
                );
                (
                    regularize(fallback).ok_or(BaselineError::Singular)?,
                    fallback,
                )
            }
        };

        let mut weights = Vec::with_capacity(classes.len());
        let mut bias = Vec::with_capacity(classes.len());
        for s in 0..classes.len() {
            let mu = DVector::from_iterator(d, means.row(s).iter().copied());
            let w = chol.solve(&mu);
            let prior = counts[s] as f64 / n as f64;
            bias.push((-0.5 * mu.dot(&w) + prior.ln()) as f32);
            weights.push(w.iter().map(|&v| v as f32).collect());
        }
        Ok(Self {
            classes,
            weights,
            bias,
            lambda,
        })
    }

    pub fn scores(&self, x: &[f32]) -> Vec<f32> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f32>() + b)
            .collect()
    }

    /// Class count (u8), then per class: class id (u8), `d` weights and the
    /// bias as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.classes.len() as u8];
        for ((c, w), b) in self.classes.iter().zip(&self.weights).zip(&self.bias) {
            out.push(*c as u8);
            for v in w.iter().chain(std::iter::once(b)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl Classifier for LdaModel {
    fn name(&self) -> &str {
        "lda"
    }

    fn predict(&self, x: &[f32]) -> usize {
        let s = self.scores(x);
        self.classes[crate::nn::argmax(&s)]
    }

    fn serialized_size(&self) -> usize {
        self.to_bytes().len()
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::blobs;
    use super::*;
    use crate::baselines::evaluate;

    #[test]
    fn separable_blobs_fit_perfectly() {
        let data = blobs(&[(0, 3.0), (3, -3.0)], 40, 12, 0.5, 1);
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let m = LdaModel::fit(&refs, &LdaConfig::default()).unwrap();
        assert_eq!(m.classes, vec![0, 3]);
        assert_eq!(evaluate(&m, &refs).accuracy, 1.0);
    }

    #[test]
    fn identical_distributions_are_near_chance() {
        let a = blobs(&[(1, 0.0)], 300, 6, 1.0, 2);
        let b = blobs(&[(2, 0.0)], 300, 6, 1.0, 3);
        let train: Vec<&LabeledWindow> = a.iter().chain(&b).collect();
        let m = LdaModel::fit(&train, &LdaConfig::default()).unwrap();
        let c = blobs(&[(1, 0.0)], 300, 6, 1.0, 4);
        let d = blobs(&[(2, 0.0)], 300, 6, 1.0, 5);
        let test: Vec<&LabeledWindow> = c.iter().chain(&d).collect();
        let acc = evaluate(&m, &test).accuracy;
        assert!((acc - 0.5).abs() < 0.1, "{acc}");
    }

    #[test]
    fn singular_covariance_gets_regularized() {
        // every sample identical within its class: zero covariance
        let data: Vec<_> = (0..6)
            .map(|i| super::super::testutil::lw(i % 2, vec![(i % 2) as f32; 6]))
            .collect();
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let m = LdaModel::fit(&refs, &LdaConfig { lambda: 0.0 }).unwrap();
        assert!(m.lambda > 0.0);
        assert_eq!(evaluate(&m, &refs).accuracy, 1.0);
    }

    #[test]
    fn full_size_fits_budget() {
        let centers: Vec<(usize, f32)> = (0..5).map(|c| (c, c as f32)).collect();
        let data = blobs(&centers, 80, 360, 1.0, 6);
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let m = LdaModel::fit(&refs, &LdaConfig::default()).unwrap();
        assert_eq!(m.serialized_size(), 1 + 5 * (1 + 361 * 4));
        assert!(m.serialized_size() <= crate::runtime::MEMORY_LIMIT_BYTES);
        // storing means plus a packed precision matrix would not fit
        assert!((5 * 360 + 360 * 361 / 2) * 4 > crate::runtime::MEMORY_LIMIT_BYTES);
    }
}
