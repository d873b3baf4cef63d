//! Small random forest: bootstrap samples, random feature subsets per split,
//! Gini splits, majority vote.

use super::{training_matrix, BaselineError, Classifier};
use crate::gesture::NUM_CLASSES;
use crate::labeling::LabeledWindow;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Depth in edges; 0 is a single leaf.
    pub max_depth: usize,
    /// Features tried per split; `None` means `sqrt(d)`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 8,
            max_depth: 8,
            max_features: None,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

const LEAF: u16 = u16::MAX;

/// 8 bytes on disk: feature (u16, `0xFFFF` for a leaf), left child index or
/// leaf class (u16; the right child is `left + 1`), threshold (f32).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u16,
    pub child_or_class: u16,
    pub threshold: f32,
}

impl Node {
    fn leaf(class: usize) -> Self {
        Self {
            feature: LEAF,
            child_or_class: class as u16,
            threshold: 0.0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut i = 0;
        loop {
            let n = self.nodes[i];
            if n.is_leaf() {
                return n.child_or_class as usize;
            }
            i = n.child_or_class as usize + usize::from(x[n.feature as usize] > n.threshold);
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                let l = n.child_or_class as usize;
                1 + go(t, l).max(go(t, l + 1))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

fn majority(counts: &[usize; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize; NUM_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    xs: &'a [&'a [f32]],
    ys: &'a [usize],
    cfg: ForestConfig,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f32, f64)> {
        let d = self.xs[0].len();
        let mut totals = [0usize; NUM_CLASSES];
        for &i in idx {
            totals[self.ys[i]] += 1;
        }
        let parent = gini(&totals, idx.len());
        let mut best: Option<(usize, f32, f64)> = None;
        let mut pairs: Vec<(f32, usize)> = Vec::with_capacity(idx.len());
        for feature in sample(rng, d, self.max_features.min(d)).into_iter() {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.xs[i][feature], self.ys[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; NUM_CLASSES];
            for k in 0..pairs.len() - 1 {
                left[pairs[k].1] += 1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = k + 1;
                let nr = pairs.len() - nl;
                let mut right = totals;
                for c in 0..NUM_CLASSES {
                    right[c] -= left[c];
                }
                let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr))
                    / pairs.len() as f64;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.2) {
                    let threshold = pairs[k].0 + (pairs[k + 1].0 - pairs[k].0) / 2.0;
                    // midpoint may round up to the right value
                    let threshold = if threshold >= pairs[k + 1].0 {
                        pairs[k].0
                    } else {
                        threshold
                    };
                    best = Some((feature, threshold, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, at: usize, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) {
        let mut counts = [0usize; NUM_CLASSES];
        for &i in &idx {
            counts[self.ys[i]] += 1;
        }
        self.nodes[at] = Node::leaf(majority(&counts));
        if depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split.max(2) {
            return;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, rng) else {
            return;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.xs[i][feature] <= threshold);
        let left = self.nodes.len();
        self.nodes.push(Node::leaf(0));
        self.nodes.push(Node::leaf(0));
        self.nodes[at] = Node {
            feature: feature as u16,
            child_or_class: left as u16,
            threshold,
        };
        self.grow(left, l, depth + 1, rng);
        self.grow(left + 1, r, depth + 1, rng);
    }
}

impl RandomForest {
    pub fn fit(
        windows: &[&LabeledWindow],
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        if cfg.trees == 0 || cfg.max_depth > 14 {
            return Err(BaselineError::Config(format!(
                "need at least one tree and depth at most 14, got {} / {}",
                cfg.trees, cfg.max_depth
            )));
        }
        let (xs, ys) = training_matrix(windows, 1)?;
        let d = xs[0].len();
        if d >= LEAF as usize {
            return Err(BaselineError::Config(format!(
                "{d} features do not fit a u16 index"
            )));
        }
        let max_features = cfg
            .max_features
            .unwrap_or(((d as f64).sqrt().round() as usize).max(1));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(cfg.trees);
        for _ in 0..cfg.trees {
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..xs.len())
                    .map(|_| rng.random_range(0..xs.len()))
                    .collect()
            } else {
                (0..xs.len()).collect()
            };
            let mut b = Builder {
                xs: &xs,
                ys: &ys,
                cfg: *cfg,
                max_features,
                nodes: vec![Node::leaf(0)],
            };
            b.grow(0, idx, 0, &mut rng);
            trees.push(Tree { nodes: b.nodes });
        }
        Ok(Self { trees })
    }

    /// Tree count (u16), then per tree its node count (u16) and 8-byte nodes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.trees.len() as u16).to_le_bytes().to_vec();
        for t in &self.trees {
            out.extend_from_slice(&(t.nodes.len() as u16).to_le_bytes());
            for n in &t.nodes {
                out.extend_from_slice(&n.feature.to_le_bytes());
                out.extend_from_slice(&n.child_or_class.to_le_bytes());
                out.extend_from_slice(&n.threshold.to_le_bytes());
            }
        }
        out
    }
}

impl Classifier for RandomForest {
    fn name(&self) -> &str {
        "rf"
    }

    fn predict(&self, x: &[f32]) -> usize {
        let mut votes = [0usize; NUM_CLASSES];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        majority(&votes)
    }

    fn serialized_size(&self) -> usize {
        self.to_bytes().len()
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{blobs, lw};
    use super::*;
    use crate::baselines::evaluate;

    #[test]
    fn depth_zero_is_majority_vote() {
        let mut data: Vec<_> = (0..30).map(|i| lw(2, vec![i as f32; 6])).collect();
        data.extend((0..5).map(|i| lw(1, vec![100.0 + i as f32; 6])));
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let cfg = ForestConfig {
            max_depth: 0,
            bootstrap: false,
            ..Default::default()
        };
        let m = RandomForest::fit(&refs, &cfg, 0).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.predict(&[103.0; 6]), 2);
    }

    #[test]
    fn single_sample_predicts_its_class() {
        let data = [lw(3, vec![0.5; 12])];
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let m = RandomForest::fit(&refs, &ForestConfig::default(), 1).unwrap();
        assert_eq!(m.predict(&[9.0; 12]), 3);
        assert_eq!(m.predict(&[-9.0; 12]), 3);
    }

    #[test]
    fn depth_and_size_limits() {
        let centers: Vec<(usize, f32)> = (0..5).map(|c| (c, 1.0)).collect();
        let data = blobs(&centers, 200, 360, 1.0, 4);
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let m = RandomForest::fit(&refs, &ForestConfig::default(), 2).unwrap();
        assert_eq!(m.trees.len(), 8);
        for t in &m.trees {
            assert!(t.depth() <= 8);
            assert!(t.nodes.iter().filter(|n| !n.is_leaf()).count() <= 255);
            assert!(t.nodes.len() <= 511);
        }
        assert!(m.serialized_size() <= 2 + 8 * (2 + 511 * 8));
        assert!(m.serialized_size() <= crate::runtime::MEMORY_LIMIT_BYTES);
        assert!(evaluate(&m, &refs).accuracy > 0.8);
    }

    #[test]
    fn deterministic_under_seed() {
        let data = blobs(&[(0, 1.0), (1, 1.0), (2, 1.0)], 50, 12, 1.0, 8);
        let refs: Vec<&LabeledWindow> = data.iter().collect();
        let a = RandomForest::fit(&refs, &ForestConfig::default(), 11).unwrap();
        let b = RandomForest::fit(&refs, &ForestConfig::default(), 11).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = RandomForest::fit(&refs, &ForestConfig::default(), 12).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }
}
