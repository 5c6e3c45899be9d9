//! Complete binary trees in level order and the plaintext inference oracle.
//!
//! Positions are 1-based: internal nodes occupy `1..2^d`, the children of `p`
//! are `2p` and `2p + 1`, and leaf `i` sits at position `2^d + i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plain::{PlainNode, PlainTree};
use super::quantize::Quantizer;
use crate::error::{Error, Result};

/// Deepest tree the complete layout accepts (γ must fit a u32 index).
pub const MAX_DEPTH: u32 = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompleteNode {
    /// 1-based feature index.
    pub feature: u32,
    pub threshold: u64,
    pub dummy: bool,
}

impl CompleteNode {
    pub const DUMMY: CompleteNode = CompleteNode { feature: 1, threshold: 0, dummy: true };
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompleteTree {
    depth: u32,
    n: usize,
    feature_bits: u32,
    nodes: Vec<CompleteNode>,
    leaves: Vec<String>,
    pub quantizer: Option<Quantizer>,
}

/// Branch directions taken (true = right) and the leaf reached.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionPath {
    pub directions: Vec<bool>,
    pub leaf: usize,
}

impl PredictionPath {
    /// Level-order positions of the internal nodes visited, root first.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = 1;
        self.directions
            .iter()
            .map(|&right| {
                let here = pos;
                pos = 2 * pos + right as usize;
                here
            })
            .collect()
    }
}

impl CompleteTree {
    pub fn new(
        depth: u32,
        n: usize,
        feature_bits: u32,
        nodes: Vec<CompleteNode>,
        leaves: Vec<String>,
    ) -> Result<Self> {
        let tree = CompleteTree { depth, n, feature_bits, nodes, leaves, quantizer: None };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > MAX_DEPTH {
            return Err(Error::ShapeMismatch(format!("depth {} outside [1, {MAX_DEPTH}]", self.depth)));
        }
        if self.n == 0 {
            return Err(Error::ShapeMismatch("no features".into()));
        }
        if self.nodes.len() != self.gamma() as usize {
            return Err(Error::LengthMismatch { expected: self.gamma() as usize, actual: self.nodes.len() });
        }
        if self.leaves.len() != self.leaf_count() {
            return Err(Error::LengthMismatch { expected: self.leaf_count(), actual: self.leaves.len() });
        }
        for node in &self.nodes {
            if node.feature == 0 || node.feature as usize > self.n {
                return Err(Error::ShapeMismatch(format!("feature {} outside [1, {}]", node.feature, self.n)));
            }
            if node.threshold >> self.feature_bits != 0 {
                return Err(Error::FeatureOutOfRange { value: node.threshold, bits: self.feature_bits });
            }
        }
        if let Some(q) = &self.quantizer {
            if q.n() != self.n || q.bits != self.feature_bits {
                return Err(Error::ShapeMismatch("quantizer does not match the tree".into()));
            }
        }
        Ok(())
    }

    pub fn with_quantizer(mut self, quantizer: Quantizer) -> Result<Self> {
        self.quantizer = Some(quantizer);
        self.validate()?;
        Ok(self)
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_bits(&self) -> u32 {
        self.feature_bits
    }

    /// Internal node count, 2^d - 1.
    pub fn gamma(&self) -> u32 {
        (1u32 << self.depth) - 1
    }

    pub fn leaf_count(&self) -> usize {
        1usize << self.depth
    }

    /// Internal node at 1-based level-order `position`.
    pub fn node(&self, position: usize) -> &CompleteNode {
        &self.nodes[position - 1]
    }

    pub fn nodes(&self) -> &[CompleteNode] {
        &self.nodes
    }

    pub fn leaves(&self) -> &[String] {
        &self.leaves
    }

    /// Layer (1-based) of a level-order position.
    pub fn layer_of(position: usize) -> u32 {
        usize::BITS - position.leading_zeros()
    }

    pub fn check_input(&self, x: &[u64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, actual: x.len() });
        }
        match x.iter().find(|&&v| v >> self.feature_bits != 0) {
            Some(&value) => Err(Error::FeatureOutOfRange { value, bits: self.feature_bits }),
            None => Ok(()),
        }
    }

    /// Inverse of [`complete_pad`] up to dummy chains: collapses nodes whose
    /// subtrees are identical.
    pub fn to_plain(&self) -> PlainTree<u64> {
        fn build(tree: &CompleteTree, pos: usize) -> PlainNode<u64> {
            if pos >= tree.leaf_count() {
                return PlainNode::leaf(tree.leaves[pos - tree.leaf_count()].clone());
            }
            let node = tree.node(pos);
            let (l, r) = (build(tree, 2 * pos), build(tree, 2 * pos + 1));
            if node.dummy && l == r {
                l
            } else {
                PlainNode::internal(node.feature as usize, node.threshold, l, r)
            }
        }
        PlainTree { n: self.n, root: build(self, 1) }
    }
}

/// Pads `tree` to a complete tree of depth `depth`. Leaves above the bottom
/// become chains of dummy nodes (feature 1, threshold 0) whose every leaf
/// carries the original label.
pub fn complete_pad(tree: &PlainTree<u64>, depth: u32, feature_bits: u32) -> Result<CompleteTree> {
    tree.validate()?;
    if tree.depth() > depth {
        return Err(Error::TreeTooDeep { depth: tree.depth(), target: depth });
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::ShapeMismatch(format!("target depth {depth} outside [1, {MAX_DEPTH}]")));
    }
    let gamma = (1usize << depth) - 1;
    let mut nodes = vec![CompleteNode::DUMMY; gamma];
    let mut leaves = vec![String::new(); gamma + 1];

    fn place(node: &PlainNode<u64>, pos: usize, gamma: usize, nodes: &mut [CompleteNode], leaves: &mut [String]) {
        if pos > gamma {
            match node {
                PlainNode::Leaf { label } => leaves[pos - gamma - 1] = label.clone(),
                PlainNode::Internal { .. } => unreachable!("depth checked"),
            }
            return;
        }
        match node {
            PlainNode::Internal { feature, threshold, left, right } => {
                nodes[pos - 1] = CompleteNode { feature: *feature as u32, threshold: *threshold, dummy: false };
                place(left, 2 * pos, gamma, nodes, leaves);
                place(right, 2 * pos + 1, gamma, nodes, leaves);
            }
            PlainNode::Leaf { .. } => {
                nodes[pos - 1] = CompleteNode::DUMMY;
                place(node, 2 * pos, gamma, nodes, leaves);
                place(node, 2 * pos + 1, gamma, nodes, leaves);
            }
        }
    }
    place(&tree.root, 1, gamma, &mut nodes, &mut leaves);
    CompleteTree::new(depth, tree.n, feature_bits, nodes, leaves)
}

/// Walks exactly `d` comparisons, right iff `x[f] > threshold`.
pub fn plaintext_infer<'a>(tree: &'a CompleteTree, x: &[u64]) -> (&'a str, PredictionPath) {
    let mut pos = 1usize;
    let mut directions = Vec::with_capacity(tree.depth as usize);
    for _ in 0..tree.depth {
        let node = tree.node(pos);
        let right = x[node.feature as usize - 1] > node.threshold;
        directions.push(right);
        pos = 2 * pos + right as usize;
    }
    let leaf = pos - tree.leaf_count();
    (&tree.leaves[leaf], PredictionPath { directions, leaf })
}

/// Uniformly random complete tree: every node real, random features,
/// thresholds and labels.
pub fn random_complete_tree<R: Rng + ?Sized>(
    rng: &mut R,
    depth: u32,
    n: usize,
    feature_bits: u32,
    labels: &[&str],
) -> Result<CompleteTree> {
    let gamma = (1usize << depth) - 1;
    let nodes = (0..gamma)
        .map(|_| CompleteNode {
            feature: rng.gen_range(1..=n as u32),
            threshold: rng.gen_range(0..1u64 << feature_bits),
            dummy: false,
        })
        .collect();
    let leaves = (0..=gamma).map(|_| labels[rng.gen_range(0..labels.len())].to_owned()).collect();
    CompleteTree::new(depth, n, feature_bits, nodes, leaves)
}

// JSON layout: {depth, n, feature_bits, quantizer, nodes: [internal..., leaves...]}.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonNode {
    Internal { feature: u32, threshold: u64, dummy: bool },
    Leaf { label: String },
}

#[derive(Serialize, Deserialize)]
struct JsonTree {
    depth: u32,
    n: usize,
    feature_bits: u32,
    #[serde(default)]
    quantizer: Option<Quantizer>,
    nodes: Vec<JsonNode>,
}

impl Serialize for CompleteTree {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| JsonNode::Internal { feature: n.feature, threshold: n.threshold, dummy: n.dummy })
            .chain(self.leaves.iter().map(|l| JsonNode::Leaf { label: l.clone() }))
            .collect();
        JsonTree {
            depth: self.depth,
            n: self.n,
            feature_bits: self.feature_bits,
            quantizer: self.quantizer.clone(),
            nodes,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CompleteTree {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = JsonTree::deserialize(d)?;
        let gamma = 1usize.checked_shl(json.depth).map(|v| v - 1).ok_or_else(|| D::Error::custom("depth too large"))?;
        let mut nodes = Vec::with_capacity(gamma);
        let mut leaves = Vec::with_capacity(gamma + 1);
        for (i, node) in json.nodes.into_iter().enumerate() {
            match (node, i < gamma) {
                (JsonNode::Internal { feature, threshold, dummy }, true) => {
                    nodes.push(CompleteNode { feature, threshold, dummy })
                }
                (JsonNode::Leaf { label }, false) => leaves.push(label),
                _ => return Err(D::Error::custom(format!("node {i} has the wrong kind for its position"))),
            }
        }
        let mut tree = CompleteTree::new(json.depth, json.n, json.feature_bits, nodes, leaves).map_err(D::Error::custom)?;
        if let Some(q) = json.quantizer {
            tree = tree.with_quantizer(q).map_err(D::Error::custom)?;
        }
        Ok(tree)
    }
}
