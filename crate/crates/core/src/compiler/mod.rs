//! Flattens a [`TreeEnsemble`] into parallel lookup arrays and splits the
//! trees evenly across workers.
//!
//! Each tree occupies one contiguous block of nodes in depth-first preorder.
//! A leaf has `feature == -1` and keeps its value in the threshold slot;
//! child indices only ever point forward inside the tree's own block, so
//! every walk terminates.

mod format;

use std::fmt;
use std::ops::Range;

use crate::gbt::{goes_left, MarginModel, TreeEnsemble, TreeNode};
use crate::{Error, Result, N_CLASSES};

pub use format::{read_model, write_model, Footprint, HEADER_BYTES};

/// Marks a leaf in `feature` and an unused child slot.
pub const LEAF: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct FlatEnsemble {
    feature: Vec<i32>,
    threshold: Vec<f32>,
    left: Vec<i32>,
    right: Vec<i32>,
    tree_roots: Vec<u32>,
    tree_class: Vec<u8>,
    n_features: usize,
    base_score: f32,
}

impl FlatEnsemble {
    /// Assembles and validates raw arrays (global node indices).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        feature: Vec<i32>,
        threshold: Vec<f32>,
        left: Vec<i32>,
        right: Vec<i32>,
        tree_roots: Vec<u32>,
        tree_class: Vec<u8>,
        n_features: usize,
        base_score: f32,
    ) -> Result<Self> {
        let flat = Self {
            feature,
            threshold,
            left,
            right,
            tree_roots,
            tree_class,
            n_features,
            base_score,
        };
        flat.validate()?;
        Ok(flat)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ModelFormat(msg));
        let n = self.feature.len();
        if self.threshold.len() != n || self.left.len() != n || self.right.len() != n {
            return bad("node arrays differ in length".into());
        }
        if self.tree_class.len() != self.tree_roots.len() {
            return bad("tree tables differ in length".into());
        }
        if let Some(c) = self.tree_class.iter().find(|&&c| usize::from(c) >= N_CLASSES) {
            return bad(format!("tree class {c}"));
        }
        if self.tree_roots.first().is_some_and(|&r| r != 0) || (self.tree_roots.is_empty() && n != 0) {
            return bad("first tree must start at node 0".into());
        }
        for t in 0..self.n_trees() {
            let block = self.tree_block(t);
            if block.is_empty() {
                return bad(format!("tree {t} has no nodes"));
            }
            for i in block.clone() {
                let (f, l, r) = (self.feature[i], self.left[i], self.right[i]);
                if f == LEAF {
                    if l != LEAF || r != LEAF {
                        return bad(format!("leaf {i} has children"));
                    }
                    continue;
                }
                if f < 0 || f as usize >= self.n_features {
                    return bad(format!("node {i} splits on feature {f}"));
                }
                for c in [l, r] {
                    if c < 0 || (c as usize) <= i || !block.contains(&(c as usize)) {
                        return bad(format!("node {i} has child {c} outside {block:?}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_trees(&self) -> usize {
        self.tree_roots.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_score(&self) -> f32 {
        self.base_score
    }

    pub fn feature_idx(&self) -> &[i32] {
        &self.feature
    }

    pub fn threshold(&self) -> &[f32] {
        &self.threshold
    }

    pub fn left_child(&self) -> &[i32] {
        &self.left
    }

    pub fn right_child(&self) -> &[i32] {
        &self.right
    }

    pub fn tree_roots(&self) -> &[u32] {
        &self.tree_roots
    }

    pub fn tree_class(&self) -> &[u8] {
        &self.tree_class
    }

    /// Node index range of tree `t`.
    pub fn tree_block(&self, t: usize) -> Range<usize> {
        let start = self.tree_roots[t] as usize;
        let end = self.tree_roots.get(t + 1).map_or(self.n_nodes(), |&r| r as usize);
        start..end
    }

    #[inline]
    pub fn eval_tree(&self, t: usize, features: &[f64]) -> f32 {
        let mut i = self.tree_roots[t] as usize;
        loop {
            let f = self.feature[i];
            if f < 0 {
                return self.threshold[i];
            }
            i = if goes_left(features[f as usize], self.threshold[i]) {
                self.left[i]
            } else {
                self.right[i]
            } as usize;
        }
    }

    /// Per-class leaf sums over `trees`, starting from zero.
    #[inline]
    pub fn partial_margins(&self, trees: Range<usize>, features: &[f64]) -> [f64; N_CLASSES] {
        let mut m = [0.0; N_CLASSES];
        for t in trees {
            m[usize::from(self.tree_class[t])] += f64::from(self.eval_tree(t, features));
        }
        m
    }

    /// Copy with zero-valued single-leaf trees appended until there are
    /// `count` trees; dummy classes continue the round-robin.
    pub fn with_padding(&self, count: usize) -> Self {
        let mut out = self.clone();
        for t in self.n_trees()..count {
            out.tree_roots.push(out.feature.len() as u32);
            out.tree_class.push((t % N_CLASSES) as u8);
            out.feature.push(LEAF);
            out.threshold.push(0.0);
            out.left.push(LEAF);
            out.right.push(LEAF);
        }
        out
    }

    /// Writes one line per node.
    pub fn dump(&self, w: &mut impl fmt::Write) -> fmt::Result {
        writeln!(
            w,
            "# flat ensemble: {} trees, {} nodes, {} classes, {} features, base_score {}",
            self.n_trees(),
            self.n_nodes(),
            N_CLASSES,
            self.n_features,
            self.base_score
        )?;
        for t in 0..self.n_trees() {
            let block = self.tree_block(t);
            writeln!(w, "tree {t} class {} nodes {}..{}", self.tree_class[t], block.start, block.end)?;
            for i in block {
                if self.feature[i] == LEAF {
                    writeln!(w, "  [{i}] leaf {}", self.threshold[i])?;
                } else {
                    writeln!(
                        w,
                        "  [{i}] f{} < {} ? {} : {}",
                        self.feature[i], self.threshold[i], self.left[i], self.right[i]
                    )?;
                }
            }
        }
        Ok(())
    }
}

impl MarginModel for FlatEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Trees summed in index order on top of `base_score`, matching
    /// [`crate::gbt::predict_margins`] exactly.
    fn margins(&self, features: &[f64]) -> [f64; N_CLASSES] {
        assert_eq!(features.len(), self.n_features, "feature count mismatch");
        let mut m = [f64::from(self.base_score); N_CLASSES];
        for t in 0..self.n_trees() {
            m[usize::from(self.tree_class[t])] += f64::from(self.eval_tree(t, features));
        }
        m
    }
}

fn push_node(node: &TreeNode, flat: &mut FlatEnsemble) -> usize {
    let id = flat.feature.len();
    match node {
        TreeNode::Leaf { value } => {
            flat.feature.push(LEAF);
            flat.threshold.push(*value);
            flat.left.push(LEAF);
            flat.right.push(LEAF);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            flat.feature.push(*feature as i32);
            flat.threshold.push(*threshold);
            flat.left.push(LEAF);
            flat.right.push(LEAF);
            let l = push_node(left, flat);
            let r = push_node(right, flat);
            flat.left[id] = l as i32;
            flat.right[id] = r as i32;
        }
    }
    id
}

/// Depth-first preorder layout of every tree, in ensemble order.
pub fn flatten(ensemble: &TreeEnsemble) -> FlatEnsemble {
    let mut flat = FlatEnsemble {
        feature: Vec::new(),
        threshold: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        tree_roots: Vec::with_capacity(ensemble.trees().len()),
        tree_class: Vec::with_capacity(ensemble.trees().len()),
        n_features: ensemble.n_features(),
        base_score: ensemble.base_score(),
    };
    for tree in ensemble.trees() {
        flat.tree_roots.push(flat.feature.len() as u32);
        flat.tree_class.push(tree.class as u8);
        push_node(&tree.root, &mut flat);
    }
    flat
}

/// Equal-size assignment of trees to workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub n_workers: usize,
    /// Tree indices per worker, contiguous and ascending.
    pub assignments: Vec<Vec<usize>>,
    /// Tree count after zero-leaf padding; a multiple of `n_workers`.
    pub padded_tree_count: usize,
    /// Tree count of the ensemble the plan was made for.
    pub source_tree_count: usize,
}

impl PartitionPlan {
    pub fn trees_per_worker(&self) -> usize {
        self.padded_tree_count / self.n_workers
    }

    /// Tree range of worker `w`.
    pub fn range(&self, w: usize) -> Range<usize> {
        let m = self.trees_per_worker();
        w * m..(w + 1) * m
    }
}

/// Pads the tree count up to a multiple of `n_workers` and gives each worker
/// one contiguous run of trees. Trees alternate classes, so every run of at
/// least three trees carries a near-equal class mix.
pub fn partition(flat: &FlatEnsemble, n_workers: usize) -> Result<PartitionPlan> {
    if n_workers == 0 {
        return Err(Error::invalid("need at least one worker"));
    }
    let n = flat.n_trees();
    let padded = n.div_ceil(n_workers) * n_workers;
    let per = padded / n_workers;
    Ok(PartitionPlan {
        n_workers,
        assignments: (0..n_workers).map(|w| (w * per..(w + 1) * per).collect()).collect(),
        padded_tree_count: padded,
        source_tree_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{predict_margins, Tree};

    fn stump(class: usize, f: usize, thr: f32, l: f32, r: f32) -> Tree {
        Tree {
            class,
            root: TreeNode::split(f, thr, TreeNode::leaf(l), TreeNode::leaf(r)),
        }
    }

    #[test]
    fn stump_layout() {
        let e = TreeEnsemble::new(150, 0.0, 0.3, vec![stump(0, 2, 5.0, 1.0, -1.0)]).unwrap();
        let f = flatten(&e);
        assert_eq!(f.feature_idx(), [2, LEAF, LEAF]);
        assert_eq!(f.threshold(), [5.0, 1.0, -1.0]);
        assert_eq!(f.left_child(), [1, LEAF, LEAF]);
        assert_eq!(f.right_child(), [2, LEAF, LEAF]);
        assert_eq!(f.tree_roots(), [0]);
    }

    #[test]
    fn empty_ensemble() {
        let f = flatten(&TreeEnsemble::new(150, 0.0, 0.3, vec![]).unwrap());
        assert_eq!(f.n_nodes(), 0);
        assert!(f.tree_roots().is_empty());
        assert_eq!(f.margins(&[0.0; 150]), [0.0; 3]);
    }

    #[test]
    fn deeper_tree_matches_node_form() {
        let root = TreeNode::split(
            0,
            10.0,
            TreeNode::split(1, 3.0, TreeNode::leaf(0.5), TreeNode::leaf(0.25)),
            TreeNode::split(2, 7.0, TreeNode::leaf(-0.5), TreeNode::leaf(0.125)),
        );
        let e = TreeEnsemble::new(3, 0.0, 0.3, vec![Tree { class: 1, root }, stump(2, 0, 1.0, 2.0, 3.0)]).unwrap();
        let f = flatten(&e);
        assert_eq!(f.tree_roots(), [0, 7]);
        for x in [[0.0, 0.0, 0.0], [11.0, 0.0, 8.0], [9.0, 5.0, 0.0], [20.0, 20.0, 1.0]] {
            assert_eq!(f.margins(&x), predict_margins(&e, &x));
        }
    }

    #[test]
    fn partition_counts() {
        let trees: Vec<Tree> = (0..270).map(|i| Tree { class: i % 3, root: TreeNode::leaf(0.0) }).collect();
        let f = flatten(&TreeEnsemble::new(150, 0.0, 0.3, trees).unwrap());
        let p = partition(&f, 9).unwrap();
        assert_eq!(p.padded_tree_count, 270);
        assert!(p.assignments.iter().all(|a| a.len() == 30));
        let p = partition(&f, 1).unwrap();
        assert_eq!(p.assignments, vec![(0..270).collect::<Vec<_>>()]);
        assert!(partition(&f, 0).is_err());
    }

    #[test]
    fn partition_pads_to_multiple() {
        let trees: Vec<Tree> = (0..10).map(|i| Tree { class: i % 3, root: TreeNode::leaf(1.0) }).collect();
        let f = flatten(&TreeEnsemble::new(150, 0.0, 0.3, trees).unwrap());
        let p = partition(&f, 4).unwrap();
        assert_eq!(p.padded_tree_count, 12);
        assert!(p.assignments.iter().all(|a| a.len() == 3));
        let mut all: Vec<usize> = p.assignments.concat();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());

        let padded = f.with_padding(12);
        assert_eq!(padded.n_trees(), 12);
        assert_eq!(padded.tree_class()[10..], [1, 2]);
        assert_eq!(padded.margins(&[0.0; 150]), f.margins(&[0.0; 150]));
    }

    #[test]
    fn validation_rejects_backward_child() {
        let r = FlatEnsemble::from_parts(
            vec![0, LEAF, LEAF],
            vec![1.0, 0.0, 0.0],
            vec![0, LEAF, LEAF],
            vec![2, LEAF, LEAF],
            vec![0],
            vec![0],
            1,
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn dump_lists_every_node() {
        let e = TreeEnsemble::new(150, 0.0, 0.3, vec![stump(0, 2, 5.0, 1.0, -1.0)]).unwrap();
        let mut s = String::new();
        flatten(&e).dump(&mut s).unwrap();
        assert!(s.contains("[0] f2 < 5 ? 1 : 2"));
        assert!(s.contains("[2] leaf -1"));
    }
}
