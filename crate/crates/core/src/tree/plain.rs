//! Arbitrary-shape binary decision trees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node of a binary tree; internal nodes send `x[feature] > threshold` right.
/// Feature indexes are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlainNode<T> {
    Internal {
        feature: usize,
        threshold: T,
        left: Box<PlainNode<T>>,
        right: Box<PlainNode<T>>,
    },
    Leaf {
        label: String,
    },
}

impl<T> PlainNode<T> {
    pub fn leaf(label: impl Into<String>) -> Self {
        PlainNode::Leaf { label: label.into() }
    }

    pub fn internal(feature: usize, threshold: T, left: PlainNode<T>, right: PlainNode<T>) -> Self {
        PlainNode::Internal { feature, threshold, left: Box::new(left), right: Box::new(right) }
    }

    pub fn depth(&self) -> u32 {
        match self {
            PlainNode::Leaf { .. } => 0,
            PlainNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn for_each_internal(&self, f: &mut impl FnMut(usize, &T)) {
        if let PlainNode::Internal { feature, threshold, left, right } = self {
            f(*feature, threshold);
            left.for_each_internal(f);
            right.for_each_internal(f);
        }
    }

    fn map<U>(&self, f: &mut impl FnMut(usize, &T) -> U) -> PlainNode<U> {
        match self {
            PlainNode::Leaf { label } => PlainNode::Leaf { label: label.clone() },
            PlainNode::Internal { feature, threshold, left, right } => PlainNode::Internal {
                feature: *feature,
                threshold: f(*feature, threshold),
                left: Box::new(left.map(f)),
                right: Box::new(right.map(f)),
            },
        }
    }
}

/// Tree over `n` features with thresholds of type `T` (real or quantized).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlainTree<T = f64> {
    pub n: usize,
    pub root: PlainNode<T>,
}

impl<T: PartialOrd + Copy> PlainTree<T> {
    pub fn new(n: usize, root: PlainNode<T>) -> Result<Self> {
        let tree = PlainTree { n, root };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::ShapeMismatch("tree has no features".into()));
        }
        let mut bad = None;
        self.root.for_each_internal(&mut |f, _| {
            if f == 0 || f > self.n {
                bad = Some(f);
            }
        });
        match bad {
            Some(f) => Err(Error::ShapeMismatch(format!("feature index {f} outside [1, {}]", self.n))),
            None => Ok(()),
        }
    }

    pub fn depth(&self) -> u32 {
        self.root.depth()
    }

    pub fn internal_count(&self) -> usize {
        let mut count = 0;
        self.root.for_each_internal(&mut |_, _| count += 1);
        count
    }

    pub fn predict(&self, x: &[T]) -> &str {
        let mut node = &self.root;
        loop {
            match node {
                PlainNode::Leaf { label } => return label,
                PlainNode::Internal { feature, threshold, left, right } => {
                    node = if x[feature - 1] > *threshold { right } else { left };
                }
            }
        }
    }

    /// Same shape with every threshold passed through `f(feature, threshold)`.
    pub fn map_thresholds<U>(&self, mut f: impl FnMut(usize, &T) -> U) -> PlainTree<U> {
        PlainTree { n: self.n, root: self.root.map(&mut f) }
    }
}

/// Random tree of depth at most `max_depth` whose thresholds are integers in
/// `[0, 2^feature_bits)`; each non-root node becomes a leaf with `leaf_prob`.
pub fn random_plain_tree<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    max_depth: u32,
    feature_bits: u32,
    labels: &[&str],
    leaf_prob: f64,
) -> PlainTree<u64> {
    fn grow<R: Rng + ?Sized>(
        rng: &mut R,
        n: usize,
        remaining: u32,
        feature_bits: u32,
        labels: &[&str],
        leaf_prob: f64,
        is_root: bool,
    ) -> PlainNode<u64> {
        if remaining == 0 || (!is_root && rng.gen_bool(leaf_prob)) {
            return PlainNode::leaf(labels[rng.gen_range(0..labels.len())]);
        }
        let feature = rng.gen_range(1..=n);
        let threshold = rng.gen_range(0..1u64 << feature_bits);
        let left = grow(rng, n, remaining - 1, feature_bits, labels, leaf_prob, false);
        let right = grow(rng, n, remaining - 1, feature_bits, labels, leaf_prob, false);
        PlainNode::internal(feature, threshold, left, right)
    }
    PlainTree { n, root: grow(rng, n, max_depth, feature_bits, labels, leaf_prob, true) }
}
