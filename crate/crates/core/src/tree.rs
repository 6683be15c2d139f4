//! CART trees and bagged forests shared by the localization regressors and the
//! scene classifier.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seeds::{self, StageRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Summed per-output variance; leaves hold target means.
    Variance,
    /// Gini impurity over `classes` labels stored as `y[0]`; leaves hold
    /// class proportions.
    Gini { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub criterion: Criterion,
    pub nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Vec<f64>],
    criterion: Criterion,
    config: &'a TreeConfig,
    width: usize,
    nodes: Vec<Node>,
}

/// Impurity accumulator: sums for variance, counts for Gini.
#[derive(Clone)]
struct Stats {
    n: f64,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Stats {
    fn new(width: usize) -> Self {
        Self {
            n: 0.0,
            sum: vec![0.0; width],
            sq: vec![0.0; width],
        }
    }

    fn add(&mut self, criterion: Criterion, y: &[f64], sign: f64) {
        self.n += sign;
        match criterion {
            Criterion::Variance => {
                for (k, v) in y.iter().enumerate() {
                    self.sum[k] += sign * v;
                    self.sq[k] += sign * v * v;
                }
            }
            Criterion::Gini { .. } => self.sum[y[0] as usize] += sign,
        }
    }

    /// Impurity times sample count.
    fn weighted_impurity(&self, criterion: Criterion) -> f64 {
        if self.n <= 0.0 {
            return 0.0;
        }
        match criterion {
            Criterion::Variance => self
                .sum
                .iter()
                .zip(&self.sq)
                .map(|(s, q)| (q - s * s / self.n).max(0.0))
                .sum(),
            Criterion::Gini { .. } => {
                self.n - self.sum.iter().map(|c| c * c).sum::<f64>() / self.n
            }
        }
    }

    fn leaf(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.n).collect()
    }
}

impl Builder<'_> {
    fn stats(&self, idx: &[usize]) -> Stats {
        let mut s = Stats::new(self.width);
        for &i in idx {
            s.add(self.criterion, &self.y[i], 1.0);
        }
        s
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut StageRng) -> usize {
        let total = self.stats(idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(total.leaf()));
        if depth >= self.config.max_depth || idx.len() < 2 * self.config.min_leaf.max(1) {
            return id;
        }
        let parent = total.weighted_impurity(self.criterion);
        if parent <= 1e-12 {
            return id;
        }
        let n_features = self.x[idx[0]].len();
        let features: Vec<usize> = match self.config.max_features {
            Some(m) if m < n_features => {
                let mut f = sample(rng, n_features, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..n_features).collect(),
        };
        let min_leaf = self.config.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = Stats::new(self.width);
            let mut right = total.clone();
            for split in 1..idx.len() {
                let moved = idx[split - 1];
                left.add(self.criterion, &self.y[moved], 1.0);
                right.add(self.criterion, &self.y[moved], -1.0);
                if split < min_leaf || idx.len() - split < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.x[moved][f], self.x[idx[split]][f]);
                if lo == hi {
                    continue;
                }
                let score = left.weighted_impurity(self.criterion) + right.weighted_impurity(self.criterion);
                if best.is_none_or(|(s, _, _)| score < s - 1e-12) {
                    best = Some((score, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        let Some((score, feature, threshold)) = best else {
            return id;
        };
        if score >= parent - 1e-12 {
            return id;
        }
        idx.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
        let cut = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl Tree {
    /// Fit on the rows `idx` of `x`/`y` (duplicates allowed, for bootstraps).
    pub fn fit(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        idx: &[usize],
        criterion: Criterion,
        config: &TreeConfig,
        rng: &mut StageRng,
    ) -> Self {
        assert!(!idx.is_empty(), "tree needs at least one row");
        let width = match criterion {
            Criterion::Variance => y[idx[0]].len(),
            Criterion::Gini { classes } => classes,
        };
        let mut builder = Builder {
            x,
            y,
            criterion,
            config,
            width,
            nodes: Vec::new(),
        };
        let mut rows = idx.to_vec();
        builder.grow(&mut rows, 0, rng);
        Self {
            criterion,
            nodes: builder.nodes,
        }
    }

    /// Leaf value reached by `x`: target mean or class proportions.
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Bootstrap sample size as a fraction of the training set.
    pub bootstrap_ratio: f64,
    pub tree: TreeConfig,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 50,
            bootstrap_ratio: 1.0,
            tree: TreeConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Bagged trees; tree `t` draws from its own seeded stream, so the
    /// result does not depend on how the trees are scheduled.
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], criterion: Criterion, config: &ForestConfig) -> Self {
        assert!(!x.is_empty() && x.len() == y.len(), "forest needs matching rows");
        let n = x.len();
        let draws = ((n as f64 * config.bootstrap_ratio).round() as usize).max(1);
        let trees = (0..config.trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = seeds::stream_rng(config.seed, "tree.forest", t as u64);
                let idx: Vec<usize> = (0..draws).map(|_| rng.random_range(0..n)).collect();
                Tree::fit(x, y, &idx, criterion, &config.tree, &mut rng)
            })
            .collect();
        Self { trees }
    }

    /// Mean of the trees' leaf values.
    pub fn predict_mean(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.trees[0].predict(x).len()];
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(tree.predict(x)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Per-class vote counts, each tree voting for its leaf's majority class.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0; self.trees[0].predict(x).len()];
        for tree in &self.trees {
            votes[majority(tree.predict(x))] += 1;
        }
        votes
    }

    /// Majority vote; ties go to the lower class.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        let votes = self.votes(x);
        let mut best = 0;
        for (c, v) in votes.iter().enumerate() {
            if *v > votes[best] {
                best = c;
            }
        }
        best
    }
}

fn majority(proportions: &[f64]) -> usize {
    let mut best = 0;
    for (c, p) in proportions.iter().enumerate() {
        if *p > proportions[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_split_on_one_feature() {
        let x = vec![vec![0.0, 5.0], vec![1.0, 5.0]];
        let y = vec![vec![10.0, 0.0], vec![20.0, 4.0]];
        let config = TreeConfig {
            max_depth: 4,
            min_leaf: 1,
            max_features: None,
        };
        let mut rng = seeds::stream_rng(1, "test", 0);
        let tree = Tree::fit(&x, &y, &[0, 1], Criterion::Variance, &config, &mut rng);
        assert_eq!(tree.predict(&x[0]), &[10.0, 0.0]);
        assert_eq!(tree.predict(&x[1]), &[20.0, 4.0]);
        match &tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn constant_targets_give_constant_forest() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![vec![3.0, -1.0]; 30];
        let forest = Forest::fit(&x, &y, Criterion::Variance, &ForestConfig::default());
        for row in &x {
            assert_eq!(forest.predict_mean(row), vec![3.0, -1.0]);
        }
    }

    #[test]
    fn forest_mean_is_mean_of_trees() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 2.0 + r[1]]).collect();
        let config = ForestConfig {
            trees: 7,
            ..ForestConfig::default()
        };
        let forest = Forest::fit(&x, &y, Criterion::Variance, &config);
        let q = [0.1, 0.2];
        let manual: f64 = forest.trees.iter().map(|t| t.predict(&q)[0]).sum::<f64>() / 7.0;
        assert!((forest.predict_mean(&q)[0] - manual).abs() < 1e-12);
    }

    #[test]
    fn gini_vote_is_mode_of_tree_votes() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 / 60.0]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![if r[0] > 0.5 { 1.0 } else { 0.0 }]).collect();
        let config = ForestConfig {
            trees: 11,
            ..ForestConfig::default()
        };
        let forest = Forest::fit(&x, &y, Criterion::Gini { classes: 2 }, &config);
        for row in &x {
            let votes: Vec<usize> = forest.trees.iter().map(|t| majority(t.predict(row))).collect();
            let ones = votes.iter().filter(|&&v| v == 1).count();
            let mode = usize::from(ones > votes.len() - ones);
            assert_eq!(forest.predict_class(row), mode);
        }
        assert_eq!(forest.predict_class(&[0.1]), 0);
        assert_eq!(forest.predict_class(&[0.9]), 1);
    }

    #[test]
    fn depth_limit_is_respected() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64]).collect();
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![(r[0] * 0.37).sin()]).collect();
        let config = TreeConfig {
            max_depth: 3,
            min_leaf: 1,
            max_features: None,
        };
        let idx: Vec<usize> = (0..200).collect();
        let mut rng = seeds::stream_rng(1, "test", 0);
        let tree = Tree::fit(&x, &y, &idx, Criterion::Variance, &config, &mut rng);
        assert!(tree.depth() <= 3);
    }
}
