use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainingSet;

/// Preorder node. The left child of a split at index `i` is `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Rows with `value < threshold` go left.
    Split {
        var: u32,
        threshold: f64,
        right: u32,
    },
    Leaf {
        value: f64,
        count: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64, count: u32) -> Self {
        Self { nodes: vec![TreeNode::Leaf { value, count }] }
    }

    #[inline]
    pub fn predict_with(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split { var, threshold, right } => {
                    i = if value_of(var as usize) < threshold { i + 1 } else { right as usize };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_with(|v| x[v])
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { right, .. } => 1 + go(nodes, i + 1).max(go(nodes, right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn uses_variable(&self, var: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, TreeNode::Split { var: v, .. } if *v as usize == var))
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Leaf { value, count } => Some((value, count)),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub var: usize,
    pub threshold: f64,
    /// Within-children sum of squared errors.
    pub sse: f64,
}

/// Scratch buffer reused across nodes: (value, weight, weight * outcome).
#[derive(Default)]
pub(crate) struct Scratch {
    buf: Vec<(f64, f64, f64)>,
}

fn weighted_sse(data: &TrainingSet, rows: &[u32], weights: &[u32]) -> (f64, f64, f64) {
    let (mut w, mut s) = (0.0, 0.0);
    for &r in rows {
        let wr = weights[r as usize] as f64;
        w += wr;
        s += wr * data.outcome[r as usize];
    }
    let mean = s / w;
    let sse = rows
        .iter()
        .map(|&r| {
            let d = data.outcome[r as usize] - mean;
            weights[r as usize] as f64 * d * d
        })
        .sum();
    (w, mean, sse)
}

/// Exhaustive minimum-SSE split over the candidate variables.
///
/// Thresholds are the distinct values observed in the node; a threshold
/// `w` sends `value < w` left. Both children must carry at least
/// `min_node` weight and the SSE must strictly drop. Ties keep the lowest
/// variable index, then the smallest threshold.
pub fn best_split(
    data: &TrainingSet,
    rows: &[u32],
    weights: &[u32],
    candidates: &[usize],
    min_node: usize,
) -> Option<SplitChoice> {
    let mut scratch = Scratch::default();
    best_split_with(data, rows, weights, candidates, min_node, &mut scratch)
}

pub(crate) fn best_split_with(
    data: &TrainingSet,
    rows: &[u32],
    weights: &[u32],
    candidates: &[usize],
    min_node: usize,
    scratch: &mut Scratch,
) -> Option<SplitChoice> {
    let first = data.outcome[*rows.first()? as usize];
    if rows.iter().all(|&r| data.outcome[r as usize] == first) {
        return None;
    }
    let (total_w, _, parent_sse) = weighted_sse(data, rows, weights);
    let min_w = min_node as f64;
    if total_w < 2.0 * min_w {
        return None;
    }
    let total_s: f64 = rows.iter().map(|&r| weights[r as usize] as f64 * data.outcome[r as usize]).sum();

    let mut vars = candidates.to_vec();
    vars.sort_unstable();
    let mut best: Option<(f64, usize, f64)> = None; // (gain, var, threshold)
    for &var in &vars {
        let col = &data.columns[var];
        scratch.buf.clear();
        scratch.buf.extend(rows.iter().map(|&r| {
            let w = weights[r as usize] as f64;
            (col[r as usize], w, w * data.outcome[r as usize])
        }));
        scratch.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let buf = &scratch.buf;
        let (mut wl, mut sl) = (0.0, 0.0);
        for i in 0..buf.len() - 1 {
            wl += buf[i].1;
            sl += buf[i].2;
            if buf[i].0 == buf[i + 1].0 {
                continue;
            }
            let wr = total_w - wl;
            if wl < min_w || wr < min_w {
                continue;
            }
            let diff = sl / wl - (total_s - sl) / wr;
            let gain = wl * wr / total_w * diff * diff;
            if gain > best.map_or(0.0, |b| b.0) {
                best = Some((gain, var, buf[i + 1].0));
            }
        }
    }
    best.map(|(gain, var, threshold)| SplitChoice { var, threshold, sse: (parent_sse - gain).max(0.0) })
}

pub(crate) struct GrowParams {
    pub mtry: usize,
    pub min_node: usize,
    pub max_depth: Option<usize>,
}

pub(crate) fn grow<R: Rng>(data: &TrainingSet, weights: &[u32], params: &GrowParams, rng: &mut R) -> Tree {
    let mut rows: Vec<u32> = (0..data.n_rows() as u32).filter(|&r| weights[r as usize] > 0).collect();
    let mut tree = Tree::default();
    if rows.is_empty() {
        return Tree::leaf(0.0, 0);
    }
    let mut scratch = Scratch::default();
    build(data, weights, params, rng, &mut rows, 0, &mut tree, &mut scratch);
    tree
}

#[allow(clippy::too_many_arguments)]
fn build<R: Rng>(
    data: &TrainingSet,
    weights: &[u32],
    params: &GrowParams,
    rng: &mut R,
    rows: &mut [u32],
    depth: usize,
    tree: &mut Tree,
    scratch: &mut Scratch,
) {
    let (w, mean, _) = weighted_sse(data, rows, weights);
    let make_leaf = |tree: &mut Tree| tree.nodes.push(TreeNode::Leaf { value: mean, count: w as u32 });

    let first = data.outcome[rows[0] as usize];
    let pure = rows.iter().all(|&r| data.outcome[r as usize] == first);
    if pure || params.max_depth.is_some_and(|d| depth >= d) || w < 2.0 * params.min_node as f64 {
        make_leaf(tree);
        return;
    }
    let p = data.n_features();
    let candidates: Vec<usize> = sample(rng, p, params.mtry.min(p)).into_vec();
    let Some(split) = best_split_with(data, rows, weights, &candidates, params.min_node, scratch) else {
        make_leaf(tree);
        return;
    };

    let col = &data.columns[split.var];
    let mut mid = 0;
    for i in 0..rows.len() {
        if col[rows[i] as usize] < split.threshold {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    let at = tree.nodes.len();
    tree.nodes.push(TreeNode::Split { var: split.var as u32, threshold: split.threshold, right: 0 });
    let (left, right) = rows.split_at_mut(mid);
    build(data, weights, params, rng, left, depth + 1, tree, scratch);
    let right_at = tree.nodes.len() as u32;
    if let TreeNode::Split { right, .. } = &mut tree.nodes[at] {
        *right = right_at;
    }
    build(data, weights, params, rng, right, depth + 1, tree, scratch);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn set(columns: Vec<Vec<f64>>, y: Vec<f64>) -> TrainingSet {
        let n = y.len();
        let names = (0..columns.len()).map(|i| format!("z{i}")).collect();
        TrainingSet::new(names, columns, y, (0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn step_outcome_splits_at_three() {
        let d = set(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![0.0, 0.0, 1.0, 1.0]);
        let s = best_split(&d, &[0, 1, 2, 3], &[1; 4], &[0], 1).unwrap();
        assert_eq!((s.var, s.threshold, s.sse), (0, 3.0, 0.0));
    }

    #[test]
    fn constant_outcome_has_no_split() {
        let d = set(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![0.3; 4]);
        assert!(best_split(&d, &[0, 1, 2, 3], &[1; 4], &[0], 1).is_none());
    }

    #[test]
    fn min_node_blocks_small_children() {
        let d = set(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![0.0, 1.0, 1.0, 1.0]);
        // best unconstrained split isolates row 0; with min_node 2 only z<3 remains
        let s = best_split(&d, &[0, 1, 2, 3], &[1; 4], &[0], 2).unwrap();
        assert_eq!(s.threshold, 3.0);
        assert!(best_split(&d, &[0, 1, 2, 3], &[1; 4], &[0], 3).is_none());
    }

    #[test]
    fn weights_count_toward_child_size() {
        let d = set(vec![vec![1.0, 2.0, 3.0]], vec![0.0, 1.0, 1.0]);
        assert!(best_split(&d, &[0, 1, 2], &[1, 1, 1], &[0], 2).is_none());
        let s = best_split(&d, &[0, 1, 2], &[2, 1, 1], &[0], 2).unwrap();
        assert_eq!(s.threshold, 2.0);
    }

    #[test]
    fn ties_prefer_lowest_variable() {
        let z = vec![1.0, 2.0, 3.0, 4.0];
        let d = set(vec![z.clone(), z], vec![0.0, 0.0, 1.0, 1.0]);
        let s = best_split(&d, &[0, 1, 2, 3], &[1; 4], &[1, 0], 1).unwrap();
        assert_eq!(s.var, 0);
    }

    #[test]
    fn exact_signal_beats_noise() {
        use rand::Rng;
        for seed in 0..100 {
            let mut rng = stream(seed, &[]);
            let n = 200;
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect();
            let noise: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let d = set(vec![noise, y.clone()], y);
            let rows: Vec<u32> = (0..n as u32).collect();
            let s = best_split(&d, &rows, &vec![1; n], &[0, 1], 1).unwrap();
            assert_eq!(s.var, 1, "seed {seed}");
        }
    }

    #[test]
    fn large_min_node_gives_grand_mean_leaf() {
        let d = set(vec![vec![1.0, 2.0, 3.0, 4.0]], vec![0.0, 0.0, 1.0, 3.0]);
        let params = GrowParams { mtry: 1, min_node: 4, max_depth: None };
        let t = grow(&d, &[1; 4], &params, &mut stream(1, &[]));
        assert_eq!(t.nodes, vec![TreeNode::Leaf { value: 1.0, count: 4 }]);
    }

    #[test]
    fn indicator_outcome_root_splits_near_zero() {
        use rand::Rng;
        let mut rng = stream(3, &[]);
        let n = 1000;
        let z1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = z1.iter().map(|&v| f64::from(u8::from(v < 0.0))).collect();
        let d = set(vec![z1.clone(), z2], y);
        let params = GrowParams { mtry: 2, min_node: 40, max_depth: None };
        let t = grow(&d, &vec![1; n], &params, &mut rng);
        assert!(t.depth() >= 1);
        match t.nodes[0] {
            TreeNode::Split { var, threshold, .. } => {
                assert_eq!(var, 0);
                let smallest_nonneg = z1.iter().copied().filter(|&v| v >= 0.0).fold(f64::INFINITY, f64::min);
                assert_eq!(threshold, smallest_nonneg);
            }
            TreeNode::Leaf { .. } => panic!("expected a split"),
        }
    }
}
