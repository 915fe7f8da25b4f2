//! Multiclass gradient-boosted decision trees with softmax log-loss.
//!
//! Trees are grown level by level with exact greedy split search. Thresholds
//! and leaf values are stored as `f32`, the width the compiled tables use,
//! so node-form and flat-form evaluation agree bit for bit. A sample goes
//! left iff `feature < threshold`.

mod json;
mod train;

use crate::{Error, Label, Result, N_CLASSES};

pub use json::{ensemble_from_json, ensemble_to_json};
pub use train::{fit_tree, train, train_with_history, TrainParams, TrainingHistory};

/// Split predicate shared by every evaluator.
#[inline(always)]
pub fn goes_left(value: f64, threshold: f32) -> bool {
    value < f64::from(threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f32,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Margin contribution, learning rate already applied.
        value: f32,
    },
}

impl TreeNode {
    pub fn leaf(value: f32) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn split(feature: usize, threshold: f32, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn evaluate(&self, features: &[f64]) -> f32 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if goes_left(features[*feature], *threshold) { left } else { right };
                }
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split { feature, left, right, .. } => {
                Some((*feature).max(left.max_feature().unwrap_or(0)).max(right.max_feature().unwrap_or(0)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub class: usize,
    pub root: TreeNode,
}

/// Trained ensemble in linked-node form, trees ordered by boosting round
/// with classes round-robin inside each round.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEnsemble {
    trees: Vec<Tree>,
    n_features: usize,
    base_score: f32,
    learning_rate: f64,
}

impl TreeEnsemble {
    pub fn new(
        n_features: usize,
        base_score: f32,
        learning_rate: f64,
        trees: Vec<Tree>,
    ) -> Result<Self> {
        for (i, t) in trees.iter().enumerate() {
            if t.class >= N_CLASSES {
                return Err(Error::invalid(format!("tree {i} has class {}", t.class)));
            }
            if let Some(f) = t.root.max_feature().filter(|&f| f >= n_features) {
                return Err(Error::invalid(format!(
                    "tree {i} splits on feature {f} of {n_features}"
                )));
            }
        }
        Ok(Self {
            trees,
            n_features,
            base_score,
            learning_rate,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_classes(&self) -> usize {
        N_CLASSES
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base_score(&self) -> f32 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Prefix of the first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> Self {
        Self {
            trees: self.trees.iter().take(rounds * N_CLASSES).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Anything that maps a feature vector to per-class margins.
pub trait MarginModel {
    fn n_features(&self) -> usize;
    fn margins(&self, features: &[f64]) -> [f64; N_CLASSES];
}

impl MarginModel for TreeEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn margins(&self, features: &[f64]) -> [f64; N_CLASSES] {
        predict_margins(self, features)
    }
}

/// `base_score` plus the leaf values of each class's trees, summed in tree
/// order.
pub fn predict_margins(ensemble: &TreeEnsemble, features: &[f64]) -> [f64; N_CLASSES] {
    assert_eq!(features.len(), ensemble.n_features, "feature count mismatch");
    let mut m = [f64::from(ensemble.base_score); N_CLASSES];
    for t in &ensemble.trees {
        m[t.class] += f64::from(t.root.evaluate(features));
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probabilities: [f64; N_CLASSES],
    pub margins: [f64; N_CLASSES],
}

impl Prediction {
    pub fn from_margins(margins: [f64; N_CLASSES]) -> Self {
        Self {
            label: Label::ALL[argmax(&margins)],
            probabilities: softmax(&margins),
            margins,
        }
    }
}

pub fn predict_class<M: MarginModel + ?Sized>(model: &M, features: &[f64]) -> Prediction {
    Prediction::from_margins(model.margins(features))
}

/// Max-subtracted softmax.
pub fn softmax(margins: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = margins.map(|m| (m - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}

/// First index of the maximum, so ties go to the lowest class.
pub fn argmax(values: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Multiclass log-loss of one sample.
pub fn logloss(margins: &[f64; N_CLASSES], label: Label) -> f64 {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + margins.iter().map(|m| (m - max).exp()).sum::<f64>().ln();
    lse - margins[label.index()]
}

/// Gradient of [`logloss`] with respect to the margins: `p - onehot(label)`.
pub fn logloss_gradient(margins: &[f64; N_CLASSES], label: Label) -> [f64; N_CLASSES] {
    let mut g = softmax(margins);
    g[label.index()] -= 1.0;
    g
}
