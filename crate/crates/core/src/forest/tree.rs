use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForestParams;
use crate::error::{Error, Result};

/// Splits must lower the weighted impurity by more than this.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    /// `None` for leaves.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Training samples per class (negative, positive) reaching the node.
    pub counts: [u32; 2],
}

impl Node {
    pub fn leaf(counts: [u32; 2]) -> Self {
        Self {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            counts,
        }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize, counts: [u32; 2]) -> Self {
        Self {
            feature: Some(feature),
            threshold,
            left,
            right,
            counts,
        }
    }

    fn n(&self) -> f64 {
        (self.counts[0] + self.counts[1]) as f64
    }
}

fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (c0 / n, c1 / n);
    1.0 - (p0 * p0 + p1 * p1)
}

/// Binary decision tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatTree", into = "FlatTree")]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

/// Column-oriented node arrays; leaves have `feature = -1`.
#[derive(Serialize, Deserialize)]
struct FlatTree {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<i64>,
    right: Vec<i64>,
    count_negative: Vec<u32>,
    count_positive: Vec<u32>,
}

impl From<DecisionTree> for FlatTree {
    fn from(t: DecisionTree) -> Self {
        let leaf = |n: &Node, v: usize| if n.feature.is_some() { v as i64 } else { -1 };
        Self {
            feature: t.nodes.iter().map(|n| n.feature.map_or(-1, |f| f as i64)).collect(),
            threshold: t.nodes.iter().map(|n| n.threshold).collect(),
            left: t.nodes.iter().map(|n| leaf(n, n.left)).collect(),
            right: t.nodes.iter().map(|n| leaf(n, n.right)).collect(),
            count_negative: t.nodes.iter().map(|n| n.counts[0]).collect(),
            count_positive: t.nodes.iter().map(|n| n.counts[1]).collect(),
        }
    }
}

impl TryFrom<FlatTree> for DecisionTree {
    type Error = String;
    fn try_from(f: FlatTree) -> std::result::Result<Self, String> {
        let n = f.feature.len();
        if [f.threshold.len(), f.left.len(), f.right.len(), f.count_negative.len(), f.count_positive.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err("node arrays differ in length".into());
        }
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let counts = [f.count_negative[i], f.count_positive[i]];
            nodes.push(if f.feature[i] < 0 {
                Node::leaf(counts)
            } else {
                let idx = |v: i64| usize::try_from(v).map_err(|_| format!("node {i}: negative child index"));
                Node::split(f.feature[i] as usize, f.threshold[i], idx(f.left[i])?, idx(f.right[i])?, counts)
            });
        }
        Ok(DecisionTree { nodes })
    }
}

impl DecisionTree {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let t = Self { nodes };
        t.validate(usize::MAX)?;
        Ok(t)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Children must come after their parent, which rules out cycles.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::ModelFormat("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node.feature {
                None => {
                    if node.counts[0] + node.counts[1] == 0 {
                        return Err(Error::ModelFormat(format!("leaf {i} has no samples")));
                    }
                }
                Some(f) => {
                    if f >= n_features {
                        return Err(Error::ModelFormat(format!("node {i}: feature index {f} out of range")));
                    }
                    if !node.threshold.is_finite() {
                        return Err(Error::ModelFormat(format!("node {i}: non-finite threshold")));
                    }
                    for c in [node.left, node.right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(Error::ModelFormat(format!("node {i}: bad child index {c}")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Positive-class fraction of the leaf reached by `row`.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.counts[1] as f64 / node.n(),
                Some(f) => i = if row[f] <= node.threshold { node.left } else { node.right },
            }
        }
    }

    /// Unnormalized weighted Gini decrease per feature.
    pub fn impurity_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        for node in &self.nodes {
            if let Some(f) = node.feature {
                let (l, r) = (&self.nodes[node.left], &self.nodes[node.right]);
                let g = |n: &Node| n.n() * gini(n.counts[0] as f64, n.counts[1] as f64);
                imp[f] += (g(node) - g(l) - g(r)).max(0.0);
            }
        }
        imp
    }
}

struct Work {
    node: usize,
    samples: Vec<usize>,
    depth: usize,
}

/// Grows one tree; returns it with the in-bag flags of every row.
pub(super) fn grow(
    rows: &[&[f64]],
    y: &[usize],
    params: &ForestParams,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> (DecisionTree, Vec<bool>) {
    let n = rows.len();
    let p = rows[0].len();
    let samples: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut in_bag = vec![false; n];
    for &s in &samples {
        in_bag[s] = true;
    }

    let counts_of = |s: &[usize]| {
        let mut c = [0u32; 2];
        for &i in s {
            c[y[i]] += 1;
        }
        c
    };
    let mut nodes = vec![Node::leaf(counts_of(&samples))];
    let mut stack = vec![Work {
        node: 0,
        samples,
        depth: 0,
    }];
    while let Some(w) = stack.pop() {
        let counts = nodes[w.node].counts;
        let depth_ok = params.max_depth == 0 || w.depth < params.max_depth;
        if !depth_ok || counts[0] == 0 || counts[1] == 0 || w.samples.len() < 2 * params.min_samples_leaf {
            continue;
        }
        let mut features = sample(rng, p, mtry).into_vec();
        features.sort_unstable();
        let Some((f, thr)) = best_split(rows, y, &w.samples, &features, params.min_samples_leaf) else {
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = w.samples.iter().partition(|&&i| rows[i][f] <= thr);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::leaf(counts_of(&left)));
        nodes.push(Node::leaf(counts_of(&right)));
        nodes[w.node] = Node::split(f, thr, li, ri, counts);
        stack.push(Work {
            node: ri,
            samples: right,
            depth: w.depth + 1,
        });
        stack.push(Work {
            node: li,
            samples: left,
            depth: w.depth + 1,
        });
    }
    (DecisionTree { nodes }, in_bag)
}

/// Lowest weighted child impurity over midpoints of consecutive distinct
/// values; the first best (feature, threshold) in scan order wins.
fn best_split(
    rows: &[&[f64]],
    y: &[usize],
    samples: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let n = samples.len();
    let mut total = [0.0f64; 2];
    for &i in samples {
        total[y[i]] += 1.0;
    }
    let parent = n as f64 * gini(total[0], total[1]);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &f in features {
        sorted.clear();
        sorted.extend(samples.iter().map(|&i| (rows[i][f], y[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0.0f64; 2];
        for k in 0..n - 1 {
            left[sorted[k].1] += 1.0;
            let (a, b) = (sorted[k].0, sorted[k + 1].0);
            if a == b {
                continue;
            }
            let nl = k + 1;
            if nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = nl as f64 * gini(left[0], left[1]) + (n - nl) as f64 * gini(right[0], right[1]);
            if best.is_none_or(|(s, _, _)| score < s) {
                let mut thr = (a + b) / 2.0;
                if !(thr >= a && thr < b) {
                    thr = a;
                }
                best = Some((score, f, thr));
            }
        }
    }
    best.filter(|(s, _, _)| parent - s > MIN_GAIN).map(|(_, f, t)| (f, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let t = DecisionTree::new(vec![
            Node::split(1, 0.25, 1, 2, [2, 3]),
            Node::leaf([2, 0]),
            Node::leaf([0, 3]),
        ])
        .unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"feature\":[1,-1,-1]"));
        assert_eq!(serde_json::from_str::<DecisionTree>(&json).unwrap(), t);
    }

    #[test]
    fn invalid_structures() {
        assert!(DecisionTree::new(vec![]).is_err());
        assert!(DecisionTree::new(vec![Node::leaf([0, 0])]).is_err());
        assert!(DecisionTree::new(vec![Node::split(0, 0.0, 0, 1, [1, 1]), Node::leaf([1, 1])]).is_err());
        let t = DecisionTree::new(vec![Node::split(3, 0.0, 1, 2, [1, 1]), Node::leaf([1, 0]), Node::leaf([0, 1])]).unwrap();
        assert!(t.validate(3).is_err());
    }

    #[test]
    fn split_midpoint_and_tie_break() {
        let data = [[0.0, 5.0], [1.0, 6.0], [2.0, 7.0], [3.0, 8.0]];
        let rows: Vec<&[f64]> = data.iter().map(|r| &r[..]).collect();
        let y = [0, 0, 1, 1];
        // Both features separate perfectly; the first one wins.
        assert_eq!(best_split(&rows, &y, &[0, 1, 2, 3], &[0, 1], 1), Some((0, 1.5)));
        assert_eq!(best_split(&rows, &y, &[0, 1, 2, 3], &[1], 1), Some((1, 6.5)));
        assert_eq!(best_split(&rows, &y, &[0, 1, 2, 3], &[0], 3), None);
    }
}
