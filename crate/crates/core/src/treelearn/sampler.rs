//! Backfitting MCMC over a sum of regression trees.
//!
//! Each sweep visits every tree once: propose one structural move
//! (GROW/PRUNE/CHANGE) accepted by Metropolis-Hastings under the depth
//! prior, then redraw all leaf means from their Normal conjugate
//! conditionals. The global residual vector `resid = response - sum(trees)`
//! is maintained incrementally so a sweep costs a few passes over the rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tree::{CompactTree, LiveTree};

/// Column-major feature storage for cache-friendly partitioning.
pub struct ColMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl ColMatrix {
    pub fn from_rows(features: &ndarray::Array2<f64>) -> Self {
        let (n_rows, n_cols) = features.dim();
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for j in 0..n_cols {
            data.extend(features.column(j).iter());
        }
        Self { data, n_rows, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }
}

/// Per-feature cutpoint candidates: up to `max_points` distinct quantiles of
/// the training column, restricted to (min, max] so every grid value splits
/// the full column nonemptily.
pub fn cutpoint_grids(x: &ColMatrix, max_points: usize) -> Vec<Vec<f64>> {
    (0..x.n_cols())
        .map(|j| {
            let col = x.col(j);
            let mut sorted = col.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
            if min == max {
                return Vec::new();
            }
            let n = sorted.len();
            let mut grid: Vec<f64> = (1..=max_points)
                .map(|i| {
                    let p = i as f64 / (max_points as f64 + 1.0);
                    let pos = p * (n as f64 - 1.0);
                    let lo = pos.floor() as usize;
                    let frac = pos - lo as f64;
                    if lo + 1 < n {
                        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                    } else {
                        sorted[lo]
                    }
                })
                .filter(|&c| c > min && c <= max)
                .collect();
            grid.dedup();
            grid
        })
        .collect()
}

/// Move mix: GROW 0.25, PRUNE 0.25, CHANGE 0.5; ineligible draws are no-ops.
#[derive(Clone, Copy)]
enum Move {
    Grow,
    Prune,
    Change,
}

pub struct BackfitSampler<'a> {
    x: &'a ColMatrix,
    grids: &'a [Vec<f64>],
    /// Leaf-mean prior variance on the working response scale.
    sigma_mu2: f64,
    split_prob_base: f64,
    split_prob_power: f64,
    trees: Vec<LiveTree>,
    /// response - sum of tree fits, per row.
    resid: Vec<f64>,
}

impl<'a> BackfitSampler<'a> {
    pub fn new(
        x: &'a ColMatrix,
        grids: &'a [Vec<f64>],
        n_trees: usize,
        sigma_mu2: f64,
        split_prob_base: f64,
        split_prob_power: f64,
        response: &[f64],
    ) -> Self {
        debug_assert_eq!(x.n_rows(), response.len());
        Self {
            x,
            grids,
            sigma_mu2,
            split_prob_base,
            split_prob_power,
            trees: (0..n_trees).map(|_| LiveTree::new(response.len())).collect(),
            resid: response.to_vec(),
        }
    }

    pub fn resid(&self) -> &[f64] {
        &self.resid
    }

    /// Shift the working response of one row by `delta` (latent or random
    /// effect updates); the tree fits are untouched so the residual shifts
    /// by the same amount.
    pub fn shift_response(&mut self, row: usize, delta: f64) {
        self.resid[row] += delta;
    }

    /// Fitted sum of trees for a training row.
    pub fn fitted(&self, row: usize, response_value: f64) -> f64 {
        response_value - self.resid[row]
    }

    fn p_split(&self, depth: u32) -> f64 {
        self.split_prob_base / (1.0 + depth as f64).powf(self.split_prob_power)
    }

    /// Integrated leaf log-likelihood with terms that cancel in move ratios
    /// dropped: depends on the leaf count and partial-residual sum only.
    fn leaf_log_marginal(&self, n: usize, sum: f64, sigma2: f64) -> f64 {
        let nv = n as f64 * self.sigma_mu2;
        0.5 * (sigma2.ln() - (sigma2 + nv).ln())
            + self.sigma_mu2 * sum * sum / (2.0 * sigma2 * (sigma2 + nv))
    }

    fn partial_residual_sum(&self, tree: &LiveTree, leaf: usize) -> f64 {
        let rows = tree.rows_of(leaf);
        let base: f64 = rows.iter().map(|&r| self.resid[r as usize]).sum();
        base + rows.len() as f64 * tree.value_of(leaf)
    }

    /// One full sweep: structural move plus leaf redraw for every tree.
    pub fn sweep(&mut self, sigma2: f64, rng: &mut ChaCha8Rng) {
        for t in 0..self.trees.len() {
            let mv = match rng.random::<f64>() {
                u if u < 0.25 => Move::Grow,
                u if u < 0.50 => Move::Prune,
                _ => Move::Change,
            };
            match mv {
                Move::Grow => self.try_grow(t, sigma2, rng),
                Move::Prune => self.try_prune(t, sigma2, rng),
                Move::Change => self.try_change(t, sigma2, rng),
            }
            self.redraw_leaves(t, sigma2, rng);
        }
    }

    fn propose_rule(&self, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let var = rng.random_range(0..self.x.n_cols());
        let grid = &self.grids[var];
        if grid.is_empty() {
            return None;
        }
        Some((var, grid[rng.random_range(0..grid.len())]))
    }

    fn try_grow(&mut self, t: usize, sigma2: f64, rng: &mut ChaCha8Rng) {
        let n_leaves = self.trees[t].leaves.len();
        let leaf = self.trees[t].leaves[rng.random_range(0..n_leaves)];
        if self.trees[t].rows_of(leaf).len() < 2 {
            return;
        }
        let Some((var, cut)) = self.propose_rule(rng) else { return };
        let col = self.x.col(var);
        let mut rows_left = Vec::new();
        let mut rows_right = Vec::new();
        for &row in self.trees[t].rows_of(leaf) {
            if col[row as usize] < cut {
                rows_left.push(row);
            } else {
                rows_right.push(row);
            }
        }
        if rows_left.is_empty() || rows_right.is_empty() {
            return;
        }

        let tree = &self.trees[t];
        let value = tree.value_of(leaf);
        let sum_of = |rows: &[u32]| -> f64 {
            rows.iter().map(|&r| self.resid[r as usize]).sum::<f64>()
                + rows.len() as f64 * value
        };
        let (nl, sl) = (rows_left.len(), sum_of(&rows_left));
        let (nr, sr) = (rows_right.len(), sum_of(&rows_right));
        let (n0, s0) = (nl + nr, sl + sr);

        let depth = tree.depth_of(leaf);
        let p_here = self.p_split(depth);
        if p_here <= 0.0 {
            return;
        }
        let p_child = self.p_split(depth + 1);
        // Singly-internal count after the hypothetical grow.
        let singly_now = tree.singly_internal().len();
        let parent_was_singly = tree
            .parent_of(leaf)
            .is_some_and(|p| tree.is_singly_internal(p));
        let singly_after = singly_now + 1 - usize::from(parent_was_singly);

        let ln_accept = (n_leaves as f64).ln() - (singly_after as f64).ln()
            + p_here.ln()
            + 2.0 * (1.0 - p_child).ln()
            - (1.0 - p_here).ln()
            + self.leaf_log_marginal(nl, sl, sigma2)
            + self.leaf_log_marginal(nr, sr, sigma2)
            - self.leaf_log_marginal(n0, s0, sigma2);

        if rng.random::<f64>().ln() < ln_accept {
            self.trees[t].commit_grow(leaf, var, cut, rows_left, rows_right);
        }
    }

    fn try_prune(&mut self, t: usize, sigma2: f64, rng: &mut ChaCha8Rng) {
        let singly = self.trees[t].singly_internal();
        if singly.is_empty() {
            return;
        }
        let node = singly[rng.random_range(0..singly.len())];
        let tree = &self.trees[t];
        let (l, r) = tree.children(node);
        let (nl, sl) = (tree.rows_of(l).len(), self.partial_residual_sum(tree, l));
        let (nr, sr) = (tree.rows_of(r).len(), self.partial_residual_sum(tree, r));
        let (n0, s0) = (nl + nr, sl + sr);

        let depth = tree.depth_of(node);
        let p_here = self.p_split(depth);
        let p_child = self.p_split(depth + 1);
        let n_leaves_after = tree.leaves.len() - 1;

        let ln_accept = (singly.len() as f64).ln() - (n_leaves_after as f64).ln()
            - p_here.ln()
            - 2.0 * (1.0 - p_child).ln()
            + (1.0 - p_here).ln()
            + self.leaf_log_marginal(n0, s0, sigma2)
            - self.leaf_log_marginal(nl, sl, sigma2)
            - self.leaf_log_marginal(nr, sr, sigma2);

        if rng.random::<f64>().ln() < ln_accept {
            // Zero the vanishing child contributions before the merge.
            let (vl, vr) = (self.trees[t].value_of(l), self.trees[t].value_of(r));
            for &row in self.trees[t].rows_of(l) {
                self.resid[row as usize] += vl;
            }
            for &row in self.trees[t].rows_of(r) {
                self.resid[row as usize] += vr;
            }
            {
                let tree = &mut self.trees[t];
                for id in [l, r] {
                    tree.set_value(id, 0.0);
                }
            }
            self.trees[t].commit_prune(node);
        }
    }

    fn try_change(&mut self, t: usize, sigma2: f64, rng: &mut ChaCha8Rng) {
        let singly = self.trees[t].singly_internal();
        if singly.is_empty() {
            return;
        }
        let node = singly[rng.random_range(0..singly.len())];
        let Some((var, cut)) = self.propose_rule(rng) else { return };

        let tree = &self.trees[t];
        let (l, r) = tree.children(node);
        let (vl, vr) = (tree.value_of(l), tree.value_of(r));
        let col = self.x.col(var);
        // Partial residuals are fixed numbers under the current fit; split
        // them by the proposed rule.
        let mut rows_left = Vec::new();
        let mut rows_right = Vec::new();
        let (mut sl_new, mut sr_new) = (0.0, 0.0);
        for (child, v) in [(l, vl), (r, vr)] {
            for &row in tree.rows_of(child) {
                let part = self.resid[row as usize] + v;
                if col[row as usize] < cut {
                    sl_new += part;
                    rows_left.push(row);
                } else {
                    sr_new += part;
                    rows_right.push(row);
                }
            }
        }
        if rows_left.is_empty() || rows_right.is_empty() {
            return;
        }
        let (nl0, sl0) = (tree.rows_of(l).len(), self.partial_residual_sum(tree, l));
        let (nr0, sr0) = (tree.rows_of(r).len(), self.partial_residual_sum(tree, r));

        let ln_accept = self.leaf_log_marginal(rows_left.len(), sl_new, sigma2)
            + self.leaf_log_marginal(rows_right.len(), sr_new, sigma2)
            - self.leaf_log_marginal(nl0, sl0, sigma2)
            - self.leaf_log_marginal(nr0, sr0, sigma2);

        if rng.random::<f64>().ln() < ln_accept {
            for (child, v) in [(l, vl), (r, vr)] {
                for &row in self.trees[t].rows_of(child) {
                    self.resid[row as usize] += v;
                }
                self.trees[t].set_value(child, 0.0);
            }
            self.trees[t].commit_change(node, var, cut, rows_left, rows_right);
        }
    }

    fn redraw_leaves(&mut self, t: usize, sigma2: f64, rng: &mut ChaCha8Rng) {
        let leaf_ids: Vec<usize> = self.trees[t].leaves.clone();
        for leaf in leaf_ids {
            let tree = &self.trees[t];
            let n = tree.rows_of(leaf).len() as f64;
            let sum = self.partial_residual_sum(tree, leaf);
            let post_var = 1.0 / (n / sigma2 + 1.0 / self.sigma_mu2);
            let post_mean = post_var * sum / sigma2;
            let z: f64 = StandardNormal.sample(rng);
            let new_value = post_mean + post_var.sqrt() * z;
            let delta = new_value - tree.value_of(leaf);
            let tree = &mut self.trees[t];
            // split borrow: mutate rows' residuals then the value
            for &row in tree.rows_of(leaf) {
                self.resid[row as usize] -= delta;
            }
            tree.set_value(leaf, new_value);
        }
    }

    /// Snapshot all trees for one posterior draw.
    pub fn snapshot_forest(&self) -> Vec<CompactTree> {
        self.trees.iter().map(LiveTree::snapshot).collect()
    }
}
