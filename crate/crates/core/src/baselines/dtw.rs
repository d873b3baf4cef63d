//! Nearest-candidate classification under multivariate dynamic time warping.
//!
//! Distances use the dependent formulation: one warping path shared by all
//! channels, local cost the Euclidean distance between the two channel
//! vectors, summed along the path.

use super::{present_classes, training_matrix, BaselineError, Classifier};
use crate::imu::CHANNELS;
use crate::labeling::LabeledWindow;
use crate::runtime::MEMORY_LIMIT_BYTES;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// DTW distance between two row-major `len × channels` sequences. `band` is
/// the Sakoe-Chiba radius; it is widened to the length difference so a path
/// always exists.
pub fn dtw_distance(a: &[f32], b: &[f32], channels: usize, band: Option<usize>) -> f64 {
    let n = a.len() / channels;
    let m = b.len() / channels;
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let r = band.unwrap_or(n.max(m)).max(n.abs_diff(m));
    let cost = |i: usize, j: usize| {
        let (x, y) = (
            &a[i * channels..(i + 1) * channels],
            &b[j * channels..(j + 1) * channels],
        );
        x.iter()
            .zip(y)
            .map(|(p, q)| {
                let d = (*p - *q) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(m - 1);
        cur.fill(f64::INFINITY);
        for j in lo..=hi {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            cur[j] = best + cost(i, j);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwConfig {
    /// Requested candidates per class; reduced automatically to fit the budget.
    pub candidates_per_class: usize,
    /// Band radius as a fraction of the window length; `None` is unconstrained.
    pub band_fraction: Option<f64>,
    /// Windows per class sampled before medoid selection.
    pub pool_per_class: usize,
}

impl Default for DtwConfig {
    fn default() -> Self {
        Self {
            candidates_per_class: 20,
            band_fraction: Some(0.1),
            pool_per_class: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwModel {
    pub channels: usize,
    pub band: Option<usize>,
    pub candidates: Vec<(usize, Vec<f32>)>,
    /// Per-class count after any budget reduction.
    pub per_class: usize,
}

/// Serialized bytes for `total` candidates of `values` floats each.
pub fn dtw_size(total: usize, values: usize) -> usize {
    5 + total * (1 + 4 * values)
}

/// Greedy medoid selection: each step adds the point that most reduces the
/// summed distance from every pool member to its nearest chosen medoid.
fn medoids(dist: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = dist.len();
    if n <= m {
        return (0..n).collect();
    }
    let mut chosen = Vec::with_capacity(m);
    let mut nearest = vec![f64::INFINITY; n];
    while chosen.len() < m {
        let mut best = (usize::MAX, f64::INFINITY);
        for cand in (0..n).filter(|c| !chosen.contains(c)) {
            let total: f64 = (0..n).map(|i| nearest[i].min(dist[i][cand])).sum();
            if total < best.1 {
                best = (cand, total);
            }
        }
        chosen.push(best.0);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist[i][best.0]);
        }
    }
    chosen
}

impl DtwModel {
    pub fn fit(
        windows: &[&LabeledWindow],
        cfg: &DtwConfig,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        if cfg.candidates_per_class == 0 || cfg.pool_per_class == 0 {
            return Err(BaselineError::Config(
                "candidate and pool counts must be positive".into(),
            ));
        }
        let (xs, ys) = training_matrix(windows, 1)?;
        let values = xs[0].len();
        let k = values / CHANNELS;
        let band = cfg
            .band_fraction
            .map(|f| ((f * k as f64).ceil() as usize).max(1));
        let classes = present_classes(&ys);

        let mut per_class = cfg.candidates_per_class;
        while per_class > 1 && dtw_size(per_class * classes.len(), values) > MEMORY_LIMIT_BYTES {
            per_class -= 1;
        }
        if per_class < cfg.candidates_per_class {
            log::warn!(
                "{} candidates per class exceed the memory budget; using {per_class}",
                cfg.candidates_per_class
            );
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut candidates = Vec::new();
        for &class in &classes {
            let members: Vec<usize> = (0..xs.len()).filter(|&i| ys[i] == class).collect();
            let pool: Vec<usize> = if members.len() <= cfg.pool_per_class {
                members
            } else {
                let mut picked: Vec<usize> = sample(&mut rng, members.len(), cfg.pool_per_class)
                    .into_iter()
                    .map(|i| members[i])
                    .collect();
                picked.sort_unstable();
                picked
            };
            let mut dist = vec![vec![0.0; pool.len()]; pool.len()];
            for i in 0..pool.len() {
                for j in i + 1..pool.len() {
                    let d = dtw_distance(xs[pool[i]], xs[pool[j]], CHANNELS, band);
                    dist[i][j] = d;
                    dist[j][i] = d;
                }
            }
            for idx in medoids(&dist, per_class) {
                candidates.push((class, xs[pool[idx]].to_vec()));
            }
        }
        Ok(Self {
            channels: CHANNELS,
            band,
            candidates,
            per_class,
        })
    }

    /// Nearest candidate as `(class, distance)`; ties go to the earlier one.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (class, c) in &self.candidates {
            let d = dtw_distance(x, c, self.channels, self.band);
            if d < best.1 {
                best = (*class, d);
            }
        }
        best
    }

    /// Channels (u8), band radius (u16, 0 for none), candidate count (u16),
    /// then per candidate its class (u8) and values as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.channels as u8];
        out.extend_from_slice(&(self.band.unwrap_or(0) as u16).to_le_bytes());
        out.extend_from_slice(&(self.candidates.len() as u16).to_le_bytes());
        for (class, values) in &self.candidates {
            out.push(*class as u8);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

impl Classifier for DtwModel {
    fn name(&self) -> &str {
        "dtw"
    }

    fn predict(&self, x: &[f32]) -> usize {
        self.nearest(x).0
    }

    fn serialized_size(&self) -> usize {
        self.to_bytes().len()
    }
}
