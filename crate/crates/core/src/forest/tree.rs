//! CART regression trees grown greedily on squared error.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

/// Growth limits shared by all trees of a forest.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl RegressionTree {
    /// Prediction for one observation given a feature accessor.
    #[inline]
    pub fn predict_with(&self, feature: impl Fn(usize) -> f64) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => at = if feature(*f) <= *threshold { *left } else { *right },
            }
        }
    }

    #[inline]
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        self.predict_with(|f| x[(row, f)])
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    /// Grow a tree on `rows` (may contain repeats from bootstrapping).
    pub(crate) fn grow<R: Rng>(
        x: &DMatrix<f64>,
        target: &[f64],
        rows: Vec<usize>,
        params: GrowParams,
        rng: &mut R,
    ) -> Self {
        let n_features = x.ncols();
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        // (node slot, rows, depth)
        let mut stack = vec![(0usize, rows, 0usize)];
        let mut order: Vec<usize> = (0..n_features).collect();
        let mut pairs: Vec<(f64, f64)> = Vec::new();

        while let Some((slot, rows, depth)) = stack.pop() {
            let n = rows.len();
            let sum: f64 = rows.iter().map(|&r| target[r]).sum();
            let mean = sum / n as f64;
            let first = target[rows[0]];
            let pure = rows.iter().all(|&r| target[r] == first);
            let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
            if n <= params.min_node_size || pure || depth_capped || n_features == 0 {
                nodes[slot] = Node::Leaf { value: mean };
                continue;
            }

            // partial Fisher-Yates: the first `mtry` entries are the candidates
            for i in 0..n_features {
                let j = rng.random_range(i..n_features);
                order.swap(i, j);
            }
            let mtry = params.mtry.min(n_features);
            let mut first_round: Vec<usize> = order[..mtry].to_vec();
            first_round.sort_unstable();
            let mut best = best_split(x, target, &rows, &first_round, &mut pairs);
            // no candidate varied inside the node: keep drawing features
            let mut k = mtry;
            while best.is_none() && k < n_features {
                best = best_split(x, target, &rows, &order[k..k + 1], &mut pairs);
                k += 1;
            }
            let Some(split) = best else {
                nodes[slot] = Node::Leaf { value: mean };
                continue;
            };

            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .iter()
                .partition(|&&r| x[(r, split.feature)] <= split.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            let right = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, right_rows, depth + 1));
            stack.push((left, left_rows, depth + 1));
        }
        RegressionTree { nodes }
    }
}

/// Best midpoint split over `features` (ascending), maximizing
/// `S_l^2/n_l + S_r^2/n_r`, i.e. minimizing the children's SSE. Strict
/// improvement is required to replace the incumbent, so ties keep the lowest
/// feature index and then the lowest threshold.
fn best_split(
    x: &DMatrix<f64>,
    target: &[f64],
    rows: &[usize],
    features: &[usize],
    pairs: &mut Vec<(f64, f64)>,
) -> Option<Candidate> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&r| target[r]).sum();
    let mut best: Option<Candidate> = None;
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x[(r, f)], target[r])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            let (v, next) = (pairs[i].0, pairs[i + 1].0);
            if v == next {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Candidate {
                    feature: f,
                    threshold: 0.5 * (v + next),
                    score,
                });
            }
        }
    }
    best
}
