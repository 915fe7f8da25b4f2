//! Compact little-endian model file.
//!
//! ```text
//! offset size field
//!      0    4 magic "SKGB"
//!      4    1 version (1)
//!      5    4 n_trees        u32
//!      9    4 n_nodes        u32
//!     13    1 n_classes      u8
//!     14    2 n_features     u16
//!     16    1 feature width  (2: i16, -1 = leaf)
//!     17    1 threshold width (4: f32, leaf value at leaves)
//!     18    1 child width    (2: u16 offset from the tree root, 0xFFFF = none)
//!     19    1 root width     (4: u32)
//!     20    1 class width    (1: u8)
//!     21    1 feature layout (0: channel-major hallux, pinky, heel)
//!     22    4 base_score     f32
//!     26      feature[n_nodes] threshold[n_nodes] left[n_nodes]
//!             right[n_nodes] tree_roots[n_trees] tree_class[n_trees]
//! ```

use std::fmt;
use std::io::{Read, Write};

use super::{FlatEnsemble, LEAF};
use crate::{Error, Result, N_CLASSES};

const MAGIC: &[u8; 4] = b"SKGB";
const VERSION: u8 = 1;
const FEATURE_W: u8 = 2;
const THRESHOLD_W: u8 = 4;
const CHILD_W: u8 = 2;
const ROOT_W: u8 = 4;
const CLASS_W: u8 = 1;
const LAYOUT_CHANNEL_MAJOR: u8 = 0;
const NO_CHILD: u16 = u16::MAX;

pub const HEADER_BYTES: usize = 26;

/// Byte counts of each section of the model file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub n_trees: usize,
    pub n_nodes: usize,
    pub header: usize,
    pub feature: usize,
    pub threshold: usize,
    pub children: usize,
    pub roots: usize,
    pub classes: usize,
}

impl Footprint {
    pub fn of(flat: &FlatEnsemble) -> Self {
        let (t, n) = (flat.n_trees(), flat.n_nodes());
        Self {
            n_trees: t,
            n_nodes: n,
            header: HEADER_BYTES,
            feature: n * usize::from(FEATURE_W),
            threshold: n * usize::from(THRESHOLD_W),
            children: 2 * n * usize::from(CHILD_W),
            roots: t * usize::from(ROOT_W),
            classes: t * usize::from(CLASS_W),
        }
    }

    /// Node and tree arrays, without the header.
    pub fn arrays(&self) -> usize {
        self.feature + self.threshold + self.children + self.roots + self.classes
    }

    pub fn total(&self) -> usize {
        self.header + self.arrays()
    }
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trees        {}", self.n_trees)?;
        writeln!(f, "nodes        {}", self.n_nodes)?;
        writeln!(f, "feature      {} B", self.feature)?;
        writeln!(f, "threshold    {} B", self.threshold)?;
        writeln!(f, "children     {} B", self.children)?;
        writeln!(f, "tree roots   {} B", self.roots)?;
        writeln!(f, "tree classes {} B", self.classes)?;
        writeln!(f, "arrays       {} B ({:.2} KiB)", self.arrays(), self.arrays() as f64 / 1024.0)?;
        writeln!(f, "header       {} B", self.header)?;
        write!(f, "total        {} B ({:.2} KiB)", self.total(), self.total() as f64 / 1024.0)
    }
}

fn too_big(what: &str, value: usize) -> Error {
    Error::ModelFormat(format!("{what} {value} does not fit the file format"))
}

pub fn write_model(flat: &FlatEnsemble, mut w: impl Write) -> Result<()> {
    let n_trees = u32::try_from(flat.n_trees()).map_err(|_| too_big("tree count", flat.n_trees()))?;
    let n_nodes = u32::try_from(flat.n_nodes()).map_err(|_| too_big("node count", flat.n_nodes()))?;
    let n_features =
        u16::try_from(flat.n_features()).map_err(|_| too_big("feature count", flat.n_features()))?;
    if flat.n_features() > i16::MAX as usize {
        return Err(too_big("feature count", flat.n_features()));
    }

    let mut buf = Vec::with_capacity(Footprint::of(flat).total());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&n_trees.to_le_bytes());
    buf.extend_from_slice(&n_nodes.to_le_bytes());
    buf.push(N_CLASSES as u8);
    buf.extend_from_slice(&n_features.to_le_bytes());
    buf.extend_from_slice(&[FEATURE_W, THRESHOLD_W, CHILD_W, ROOT_W, CLASS_W, LAYOUT_CHANNEL_MAJOR]);
    buf.extend_from_slice(&flat.base_score().to_le_bytes());
    debug_assert_eq!(buf.len(), HEADER_BYTES);

    for &f in flat.feature_idx() {
        buf.extend_from_slice(&(f as i16).to_le_bytes());
    }
    for &t in flat.threshold() {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    let mut left = Vec::with_capacity(flat.n_nodes());
    let mut right = Vec::with_capacity(flat.n_nodes());
    for t in 0..flat.n_trees() {
        let block = flat.tree_block(t);
        if block.len() > usize::from(NO_CHILD) {
            return Err(too_big("tree size", block.len()));
        }
        let rel = |c: i32| if c == LEAF { NO_CHILD } else { (c as usize - block.start) as u16 };
        for i in block.clone() {
            left.push(rel(flat.left_child()[i]));
            right.push(rel(flat.right_child()[i]));
        }
    }
    for c in left.iter().chain(&right) {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for &r in flat.tree_roots() {
        buf.extend_from_slice(&r.to_le_bytes());
    }
    buf.extend_from_slice(flat.tree_class());
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::ModelFormat(format!("truncated at byte {} of {}", self.pos, self.bytes.len()))
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn array<T, const N: usize>(&mut self, n: usize, conv: fn([u8; N]) -> T) -> Result<Vec<T>> {
        (0..n).map(|_| self.take::<N>().map(conv)).collect()
    }
}

pub fn read_model(mut r: impl Read) -> Result<FlatEnsemble> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    let bad = |msg: String| Err(Error::ModelFormat(msg));

    if &c.take::<4>()? != MAGIC {
        return bad("bad magic".into());
    }
    let version = c.u8()?;
    if version != VERSION {
        return bad(format!("unsupported version {version}"));
    }
    let n_trees = u32::from_le_bytes(c.take()?) as usize;
    let n_nodes = u32::from_le_bytes(c.take()?) as usize;
    let n_classes = c.u8()?;
    if usize::from(n_classes) != N_CLASSES {
        return bad(format!("{n_classes} classes"));
    }
    let n_features = usize::from(u16::from_le_bytes(c.take()?));
    let widths = c.take::<5>()?;
    if widths != [FEATURE_W, THRESHOLD_W, CHILD_W, ROOT_W, CLASS_W] {
        return bad(format!("unsupported field widths {widths:?}"));
    }
    let layout = c.u8()?;
    if layout != LAYOUT_CHANNEL_MAJOR {
        return bad(format!("unknown feature layout {layout}"));
    }
    let base_score = f32::from_le_bytes(c.take()?);

    let expected = HEADER_BYTES + n_nodes * 10 + n_trees * 5;
    if bytes.len() != expected {
        return bad(format!("file is {} bytes, header implies {expected}", bytes.len()));
    }

    let feature: Vec<i32> = c.array(n_nodes, |b| i32::from(i16::from_le_bytes(b)))?;
    let threshold = c.array(n_nodes, f32::from_le_bytes)?;
    let left_rel = c.array(n_nodes, u16::from_le_bytes)?;
    let right_rel = c.array(n_nodes, u16::from_le_bytes)?;
    let roots = c.array(n_trees, u32::from_le_bytes)?;
    let classes = c.array(n_trees, |[b]: [u8; 1]| b)?;

    for (t, w) in roots.windows(2).enumerate() {
        if w[1] <= w[0] {
            return bad(format!("tree roots not increasing at tree {}", t + 1));
        }
    }
    if roots.last().is_some_and(|&r| r as usize >= n_nodes) {
        return bad("last tree root past the node array".into());
    }

    let mut left = vec![LEAF; n_nodes];
    let mut right = vec![LEAF; n_nodes];
    for t in 0..n_trees {
        let start = roots[t] as usize;
        let end = roots.get(t + 1).map_or(n_nodes, |&r| r as usize);
        let abs = |rel: u16| if rel == NO_CHILD { LEAF } else { (start + usize::from(rel)) as i32 };
        for i in start..end {
            left[i] = abs(left_rel[i]);
            right[i] = abs(right_rel[i]);
            if left[i] >= end as i32 || right[i] >= end as i32 {
                return bad(format!("node {i} has a child past tree {t}"));
            }
        }
    }
    // Remaining structural checks (forward children, leaf markers) live in
    // from_parts so both construction paths share them.
    FlatEnsemble::from_parts(feature, threshold, left, right, roots, classes, n_features, base_score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::flatten;
    use crate::gbt::{MarginModel, Tree, TreeEnsemble, TreeNode};

    fn sample() -> FlatEnsemble {
        let deep = TreeNode::split(
            149,
            2047.5,
            TreeNode::split(0, 1.0, TreeNode::leaf(0.5), TreeNode::leaf(-0.5)),
            TreeNode::leaf(0.125),
        );
        let e = TreeEnsemble::new(
            150,
            0.0,
            0.3,
            vec![
                Tree { class: 0, root: deep },
                Tree { class: 1, root: TreeNode::leaf(0.25) },
                Tree { class: 2, root: TreeNode::split(7, 3.5, TreeNode::leaf(1.0), TreeNode::leaf(2.0)) },
            ],
        )
        .unwrap();
        flatten(&e)
    }

    #[test]
    fn round_trip_and_size() {
        let flat = sample();
        let mut buf = Vec::new();
        write_model(&flat, &mut buf).unwrap();
        assert_eq!(buf.len(), Footprint::of(&flat).total());
        assert_eq!(buf.len(), HEADER_BYTES + 9 * 10 + 3 * 5);
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, flat);
        let x: Vec<f64> = (0..150).map(|i| i as f64 * 13.0).collect();
        assert_eq!(back.margins(&x), flat.margins(&x));
    }

    #[test]
    fn byte_layout() {
        let mut buf = Vec::new();
        write_model(&sample(), &mut buf).unwrap();
        assert_eq!(&buf[..5], b"SKGB\x01");
        assert_eq!(u32::from_le_bytes(buf[5..9].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[9..13].try_into().unwrap()), 9);
        assert_eq!(buf[13], 3);
        assert_eq!(u16::from_le_bytes(buf[14..16].try_into().unwrap()), 150);
        // Preorder features: split on 149, split on 0, then a leaf marker.
        assert_eq!(&buf[26..32], &[149, 0, 0, 0, 0xFF, 0xFF]);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_model(&sample(), &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_model(bad.as_slice()).is_err());

        assert!(read_model(&buf[..buf.len() - 1]).is_err());

        // Point the root's left child back at itself.
        let mut bad = buf.clone();
        let left0 = HEADER_BYTES + 9 * 6;
        bad[left0..left0 + 2].copy_from_slice(&0u16.to_le_bytes());
        assert!(read_model(bad.as_slice()).is_err());

        // Swap the second and third tree roots.
        let mut bad = buf.clone();
        let roots = HEADER_BYTES + 9 * 10;
        bad[roots + 4..roots + 8].copy_from_slice(&8u32.to_le_bytes());
        bad[roots + 8..roots + 12].copy_from_slice(&5u32.to_le_bytes());
        assert!(read_model(bad.as_slice()).is_err());
    }
}
