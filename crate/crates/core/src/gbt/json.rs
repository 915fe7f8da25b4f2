//! Text form of a [`TreeEnsemble`], read by the compiler.
//!
//! ```json
//! {
//!   "format": "skilog-gbt",
//!   "version": 1,
//!   "n_classes": 3,
//!   "n_features": 150,
//!   "feature_layout": "channel-major hallux,pinky,heel",
//!   "base_score": 0.0,
//!   "learning_rate": 0.3,
//!   "trees": [
//!     { "class": 0, "nodes": [
//!         { "id": 0, "feature": 12, "threshold": 1500.5, "left": 1, "right": 2 },
//!         { "id": 1, "leaf": 0.25 },
//!         { "id": 2, "leaf": -0.1 } ] }
//!   ]
//! }
//! ```
//!
//! Node ids are preorder positions within the tree; children always have
//! larger ids than their parent.

use serde::{Deserialize, Serialize};

use super::{Tree, TreeEnsemble, TreeNode};
use crate::{Error, Result, N_CLASSES};

const FORMAT: &str = "skilog-gbt";
const VERSION: u32 = 1;
pub(crate) const FEATURE_LAYOUT: &str = "channel-major hallux,pinky,heel";

#[derive(Serialize, Deserialize)]
struct EnsembleDoc {
    format: String,
    version: u32,
    n_classes: usize,
    n_features: usize,
    feature_layout: String,
    base_score: f32,
    learning_rate: f64,
    trees: Vec<TreeDoc>,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    class: usize,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leaf: Option<f32>,
}

fn push_preorder(node: &TreeNode, out: &mut Vec<NodeDoc>) {
    let id = out.len();
    match node {
        TreeNode::Leaf { value } => out.push(NodeDoc {
            id,
            feature: None,
            threshold: None,
            left: None,
            right: None,
            leaf: Some(*value),
        }),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(NodeDoc {
                id,
                feature: Some(*feature),
                threshold: Some(*threshold),
                left: None,
                right: None,
                leaf: None,
            });
            out[id].left = Some(out.len());
            push_preorder(left, out);
            out[id].right = Some(out.len());
            push_preorder(right, out);
        }
    }
}

pub fn ensemble_to_json(ensemble: &TreeEnsemble) -> Result<String> {
    let doc = EnsembleDoc {
        format: FORMAT.into(),
        version: VERSION,
        n_classes: N_CLASSES,
        n_features: ensemble.n_features(),
        feature_layout: FEATURE_LAYOUT.into(),
        base_score: ensemble.base_score(),
        learning_rate: ensemble.learning_rate(),
        trees: ensemble
            .trees()
            .iter()
            .map(|t| {
                let mut nodes = Vec::with_capacity(t.root.node_count());
                push_preorder(&t.root, &mut nodes);
                TreeDoc { class: t.class, nodes }
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

fn build(nodes: &[NodeDoc], id: usize, tree: usize) -> Result<TreeNode> {
    let bad = |msg: String| Error::ModelFormat(format!("tree {tree} node {id}: {msg}"));
    let node = nodes.get(id).ok_or_else(|| bad("missing".into()))?;
    if node.id != id {
        return Err(bad(format!("listed with id {}", node.id)));
    }
    match (node.leaf, node.feature, node.threshold, node.left, node.right) {
        (Some(value), None, None, None, None) => Ok(TreeNode::leaf(value)),
        (None, Some(feature), Some(threshold), Some(l), Some(r)) => {
            if l <= id || r <= id || l == r {
                return Err(bad("children must follow their parent".into()));
            }
            Ok(TreeNode::split(feature, threshold, build(nodes, l, tree)?, build(nodes, r, tree)?))
        }
        _ => Err(bad("must be either a leaf or a full split".into())),
    }
}

pub fn ensemble_from_json(text: &str) -> Result<TreeEnsemble> {
    let doc: EnsembleDoc = serde_json::from_str(text)?;
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported format {} v{}",
            doc.format, doc.version
        )));
    }
    if doc.n_classes != N_CLASSES {
        return Err(Error::ModelFormat(format!("{} classes", doc.n_classes)));
    }
    if doc.feature_layout != FEATURE_LAYOUT {
        return Err(Error::ModelFormat(format!("feature layout {:?}", doc.feature_layout)));
    }
    let trees = doc
        .trees
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let root = build(&t.nodes, 0, i)?;
            if root.node_count() != t.nodes.len() {
                return Err(Error::ModelFormat(format!("tree {i} has unreachable nodes")));
            }
            Ok(Tree { class: t.class, root })
        })
        .collect::<Result<Vec<_>>>()?;
    TreeEnsemble::new(doc.n_features, doc.base_score, doc.learning_rate, trees)
        .map_err(|e| Error::ModelFormat(e.to_string()))
}
