//! Monotone per-feature maps from reals onto `[0, 2^t)`.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::plain::PlainTree;
use crate::error::{Error, Result};

/// What to do with a value outside the fitted domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainPolicy {
    /// Clamp to the nearest end and count it.
    #[default]
    Clamp,
    Strict,
}

/// `q(v) = floor((v - offset) * scale)` for one feature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub offset: f64,
    pub scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Quantizer {
    pub bits: u32,
    pub features: Vec<FeatureMap>,
    #[serde(default)]
    pub policy: DomainPolicy,
    #[serde(skip)]
    clamped: AtomicU64,
}

impl Clone for Quantizer {
    fn clone(&self) -> Self {
        Quantizer {
            bits: self.bits,
            features: self.features.clone(),
            policy: self.policy,
            clamped: AtomicU64::new(self.clamped()),
        }
    }
}

impl PartialEq for Quantizer {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits && self.features == other.features && self.policy == other.policy
    }
}

// Absorbs floating-point noise at the domain edges.
const EDGE_SLACK: f64 = 1e-9;

impl Quantizer {
    /// Integer features already in `[0, 2^bits)` pass through unchanged.
    pub fn identity(n: usize, bits: u32) -> Self {
        Quantizer::from_maps(bits, vec![FeatureMap { offset: 0.0, scale: 1.0 }; n])
    }

    pub fn from_maps(bits: u32, features: Vec<FeatureMap>) -> Self {
        Quantizer { bits, features, policy: DomainPolicy::Clamp, clamped: AtomicU64::new(0) }
    }

    /// Stretches each feature's observed `[min, max]` over `[0, 2^bits - 1]`.
    pub fn fit(rows: &[Vec<f64>], bits: u32) -> Result<Self> {
        let n = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let top = ((1u64 << bits) - 1) as f64;
        let features = (0..n)
            .map(|j| {
                let (lo, hi) = rows
                    .iter()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let scale = if hi > lo { top / (hi - lo) } else { 1.0 };
                FeatureMap { offset: lo, scale }
            })
            .collect();
        Ok(Quantizer::from_maps(bits, features))
    }

    pub fn with_policy(mut self, policy: DomainPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    fn top(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Number of values clamped so far.
    pub fn clamped(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Width of one quantization bucket of `feature` (0-based) in input units.
    pub fn resolution(&self, feature: usize) -> f64 {
        1.0 / self.features[feature].scale
    }

    /// Quantizes one value of the 0-based `feature`.
    pub fn quantize_value(&self, feature: usize, value: f64) -> Result<u64> {
        let map = self.features[feature];
        let raw = (value - map.offset) * map.scale;
        let top = self.top() as f64;
        if raw.is_nan() || raw < -EDGE_SLACK || raw > top + EDGE_SLACK {
            if self.policy == DomainPolicy::Strict {
                return Err(Error::OutOfDomain { feature: feature + 1, value });
            }
            self.clamped.fetch_add(1, Ordering::Relaxed);
            log::warn!("feature {} value {value} clamped into quantizer domain", feature + 1);
        }
        Ok(raw.clamp(0.0, top).floor() as u64)
    }

    pub fn quantize_vector(&self, x: &[f64]) -> Result<Vec<u64>> {
        if x.len() != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), actual: x.len() });
        }
        x.iter().enumerate().map(|(j, &v)| self.quantize_value(j, v)).collect()
    }

    /// Maps thresholds with the same function as features, so `x <= theta`
    /// implies `q(x) <= q(theta)` (left), and `x > theta` implies `q(x) > q(theta)`
    /// unless both fall in one bucket.
    pub fn quantize_tree(&self, tree: &PlainTree<f64>) -> Result<PlainTree<u64>> {
        if tree.n != self.n() {
            return Err(Error::LengthMismatch { expected: self.n(), actual: tree.n });
        }
        let mut first_err = None;
        let out = tree.map_thresholds(|f, &theta| {
            self.quantize_value(f - 1, theta).unwrap_or_else(|e| {
                first_err.get_or_insert(e);
                0
            })
        });
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::plain::PlainNode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn identity_on_integers() {
        let q = Quantizer::identity(3, 7);
        assert_eq!(q.quantize_vector(&[0.0, 5.0, 127.0]).unwrap(), vec![0, 5, 127]);
        assert_eq!(q.clamped(), 0);
    }

    #[test]
    fn clamp_counts_and_strict_errors() {
        let q = Quantizer::identity(1, 4);
        assert_eq!(q.quantize_value(0, 20.0).unwrap(), 15);
        assert_eq!(q.quantize_value(0, -3.0).unwrap(), 0);
        assert_eq!(q.clamped(), 2);
        let strict = Quantizer::identity(1, 4).with_policy(DomainPolicy::Strict);
        assert!(matches!(strict.quantize_value(0, 16.0), Err(Error::OutOfDomain { feature: 1, .. })));
    }

    #[test]
    fn tie_goes_left_after_quantization() {
        let q = Quantizer::identity(1, 7);
        let tree = PlainTree::new(1, PlainNode::internal(1, 5.0, PlainNode::leaf("L"), PlainNode::leaf("R"))).unwrap();
        let qt = q.quantize_tree(&tree).unwrap();
        assert_eq!(qt.predict(&q.quantize_vector(&[5.0]).unwrap()), "L");
        assert_eq!(qt.predict(&q.quantize_vector(&[6.0]).unwrap()), "R");
    }

    #[test]
    fn fit_is_monotone_and_covers_range() {
        let rows = vec![vec![-2.0, 10.0], vec![3.0, 10.0], vec![0.5, 10.0]];
        let q = Quantizer::fit(&rows, 7).unwrap();
        assert_eq!(q.quantize_value(0, -2.0).unwrap(), 0);
        assert_eq!(q.quantize_value(0, 3.0).unwrap(), 127);
        assert_eq!(q.quantize_value(1, 10.0).unwrap(), 0);
        let mut prev = 0;
        for i in 0..=500 {
            let v = q.quantize_value(0, -2.0 + 5.0 * i as f64 / 500.0).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(q.clamped(), 0);
    }

    #[test]
    fn real_and_quantized_inference_disagree_only_near_thresholds() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.gen_range(0.0..40.0), rng.gen_range(-1.0..1.0)]).collect();
        let q = Quantizer::fit(&rows, 7).unwrap();
        let tree = PlainTree::new(
            2,
            PlainNode::internal(
                1,
                17.3,
                PlainNode::internal(2, -0.25, PlainNode::leaf("a"), PlainNode::leaf("b")),
                PlainNode::internal(2, 0.4, PlainNode::leaf("c"), PlainNode::leaf("d")),
            ),
        )
        .unwrap();
        let qt = q.quantize_tree(&tree).unwrap();
        let thresholds = [(0usize, 17.3), (1, -0.25), (1, 0.4)];
        let mut disagreements = 0;
        for _ in 0..1000 {
            let x: Vec<f64> = (0..2).map(|j| {
                let m = q.features[j];
                m.offset + rng.gen_range(0.0..127.0) / m.scale
            }).collect();
            if tree.predict(&x) != qt.predict(&q.quantize_vector(&x).unwrap()) {
                disagreements += 1;
                let near = thresholds.iter().any(|&(j, t)| (x[j] - t).abs() <= q.resolution(j));
                assert!(near, "disagreement away from every threshold at {x:?}");
            }
        }
        assert!(disagreements < 100, "{disagreements}");
    }
}
