//! Tree storage for the ensemble sampler.
//!
//! `LiveTree` is the mutable structure the MCMC operates on: an arena of
//! nodes with parent links, per-leaf row lists, and a free list so GROW and
//! PRUNE reuse slots. `CompactTree` is the immutable snapshot kept per
//! posterior draw.

/// Sentinel child index marking a leaf.
const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct LiveTree {
    var: Vec<usize>,
    cut: Vec<f64>,
    left: Vec<usize>,
    right: Vec<usize>,
    parent: Vec<usize>,
    depth: Vec<u32>,
    value: Vec<f64>,
    rows: Vec<Vec<u32>>,
    free: Vec<usize>,
    /// Current leaf node ids, in no particular order.
    pub leaves: Vec<usize>,
}

impl LiveTree {
    /// A single root leaf holding every row, with value 0.
    pub fn new(n_rows: usize) -> Self {
        Self {
            var: vec![0],
            cut: vec![0.0],
            left: vec![NONE],
            right: vec![NONE],
            parent: vec![NONE],
            depth: vec![0],
            value: vec![0.0],
            rows: vec![(0..n_rows as u32).collect()],
            free: Vec::new(),
            leaves: vec![0],
        }
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.left[id] == NONE
    }

    pub fn depth_of(&self, id: usize) -> u32 {
        self.depth[id]
    }

    pub fn value_of(&self, id: usize) -> f64 {
        self.value[id]
    }

    pub fn set_value(&mut self, id: usize, v: f64) {
        self.value[id] = v;
    }

    pub fn rows_of(&self, id: usize) -> &[u32] {
        &self.rows[id]
    }

    pub fn children(&self, id: usize) -> (usize, usize) {
        (self.left[id], self.right[id])
    }

    pub fn parent_of(&self, id: usize) -> Option<usize> {
        (self.parent[id] != NONE).then_some(self.parent[id])
    }

    /// Whether `id` is internal with two leaf children.
    pub fn is_singly_internal(&self, id: usize) -> bool {
        !self.is_leaf(id) && self.is_leaf(self.left[id]) && self.is_leaf(self.right[id])
    }

    /// Internal nodes whose children are both leaves.
    pub fn singly_internal(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .leaves
            .iter()
            .filter_map(|&l| self.parent_of(l))
            .filter(|&p| self.is_singly_internal(p))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    #[cfg(test)]
    pub fn n_internal(&self) -> usize {
        let allocated = self.var.len() - self.free.len();
        allocated - self.leaves.len()
    }

    fn alloc(&mut self) -> usize {
        if let Some(id) = self.free.pop() {
            id
        } else {
            self.var.push(0);
            self.cut.push(0.0);
            self.left.push(NONE);
            self.right.push(NONE);
            self.parent.push(NONE);
            self.depth.push(0);
            self.value.push(0.0);
            self.rows.push(Vec::new());
            self.var.len() - 1
        }
    }

    fn remove_leaf_entry(&mut self, id: usize) {
        let pos = self.leaves.iter().position(|&l| l == id).expect("leaf in list");
        self.leaves.swap_remove(pos);
    }

    /// Turn `leaf` into an internal node with the given rule and row split.
    /// Children inherit the parent's value, so the tree's fitted function is
    /// unchanged by the commit itself. Returns (left, right) ids.
    pub fn commit_grow(
        &mut self,
        leaf: usize,
        var: usize,
        cut: f64,
        rows_left: Vec<u32>,
        rows_right: Vec<u32>,
    ) -> (usize, usize) {
        debug_assert!(self.is_leaf(leaf));
        let inherited = self.value[leaf];
        let child_depth = self.depth[leaf] + 1;
        let l = self.alloc();
        let r = self.alloc();
        for (id, rows) in [(l, rows_left), (r, rows_right)] {
            self.left[id] = NONE;
            self.right[id] = NONE;
            self.parent[id] = leaf;
            self.depth[id] = child_depth;
            self.value[id] = inherited;
            self.rows[id] = rows;
        }
        self.var[leaf] = var;
        self.cut[leaf] = cut;
        self.left[leaf] = l;
        self.right[leaf] = r;
        self.rows[leaf].clear();
        self.remove_leaf_entry(leaf);
        self.leaves.push(l);
        self.leaves.push(r);
        (l, r)
    }

    /// Collapse a singly-internal node back into a leaf with value 0;
    /// the caller is responsible for residual bookkeeping beforehand.
    pub fn commit_prune(&mut self, node: usize) {
        debug_assert!(self.is_singly_internal(node));
        let (l, r) = (self.left[node], self.right[node]);
        let mut merged = std::mem::take(&mut self.rows[l]);
        merged.append(&mut self.rows[r]);
        self.rows[node] = merged;
        self.left[node] = NONE;
        self.right[node] = NONE;
        self.value[node] = 0.0;
        self.remove_leaf_entry(l);
        self.remove_leaf_entry(r);
        self.free.push(l);
        self.free.push(r);
        self.leaves.push(node);
    }

    /// Replace the rule of a singly-internal node and redistribute its rows;
    /// both children get value 0, caller handles residual bookkeeping.
    pub fn commit_change(
        &mut self,
        node: usize,
        var: usize,
        cut: f64,
        rows_left: Vec<u32>,
        rows_right: Vec<u32>,
    ) {
        debug_assert!(self.is_singly_internal(node));
        let (l, r) = (self.left[node], self.right[node]);
        self.var[node] = var;
        self.cut[node] = cut;
        self.rows[l] = rows_left;
        self.rows[r] = rows_right;
        self.value[l] = 0.0;
        self.value[r] = 0.0;
    }

    /// Snapshot into the compact prediction form.
    pub fn snapshot(&self) -> CompactTree {
        let mut nodes = Vec::new();
        self.snapshot_rec(0, &mut nodes);
        CompactTree { nodes }
    }

    fn snapshot_rec(&self, id: usize, nodes: &mut Vec<CompactNode>) -> u32 {
        let slot = nodes.len() as u32;
        nodes.push(CompactNode { var: u32::MAX, left: 0, right: 0, num: 0.0 });
        if self.is_leaf(id) {
            nodes[slot as usize].num = self.value[id];
        } else {
            let l = self.snapshot_rec(self.left[id], nodes);
            let r = self.snapshot_rec(self.right[id], nodes);
            nodes[slot as usize] =
                CompactNode { var: self.var[id] as u32, left: l, right: r, num: self.cut[id] };
        }
        slot
    }
}

/// An immutable tree from one posterior draw. `var == u32::MAX` marks a
/// leaf, in which case `num` is the leaf value; otherwise `num` is the
/// cutpoint and rows with `x[var] < num` go left.
#[derive(Debug, Clone)]
pub struct CompactNode {
    pub var: u32,
    pub left: u32,
    pub right: u32,
    pub num: f64,
}

#[derive(Debug, Clone)]
pub struct CompactTree {
    pub nodes: Vec<CompactNode>,
}

impl CompactTree {
    pub fn predict_row(&self, features: impl Fn(usize) -> f64) -> f64 {
        let mut id = 0usize;
        loop {
            let node = &self.nodes[id];
            if node.var == u32::MAX {
                return node.num;
            }
            id = if features(node.var as usize) < node.num {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// Add one to `counts[var]` for every internal node.
    pub fn accumulate_split_counts(&self, counts: &mut [f64]) {
        for node in &self.nodes {
            if node.var != u32::MAX {
                counts[node.var as usize] += 1.0;
            }
        }
    }

    pub fn n_internal(&self) -> usize {
        self.nodes.iter().filter(|n| n.var != u32::MAX).count()
    }
}
