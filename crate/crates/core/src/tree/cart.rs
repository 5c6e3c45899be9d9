//! Labeled CSV datasets and greedy Gini CART training.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::plain::{PlainNode, PlainTree};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch { expected: rows.len(), actual: labels.len() });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != feature_names.len()) {
            return Err(Error::LengthMismatch { expected: feature_names.len(), actual: bad.len() });
        }
        Ok(Dataset { feature_names, rows, labels })
    }

    /// CSV with a header row; the last column is the label, the rest numeric.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::EmptyDataset);
        }
        let n = header.len() - 1;
        let feature_names = header.iter().take(n).map(str::to_owned).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in csv.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .take(n)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| {
                        Error::format(format!("row {}: non-numeric feature value {v:?}", line + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
            labels.push(record[n].to_owned());
        }
        Dataset::new(feature_names, rows, labels)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_reader(std::fs::File::open(path)?)
    }

    pub fn n(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Most frequent label, ties broken by lexicographic order.
    pub fn majority_label(&self) -> Option<&str> {
        majority(&self.labels, &(0..self.len()).collect::<Vec<_>>())
    }
}

fn majority<'a>(labels: &'a [String], idx: &[usize]) -> Option<&'a str> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for &i in idx {
        *counts.entry(&labels[i]).or_default() += 1;
    }
    // BTreeMap iterates in label order, so max_by_key keeping the first max needs a reversal.
    counts.into_iter().rev().max_by_key(|&(_, c)| c).map(|(l, _)| l)
}

fn gini(counts: &BTreeMap<&str, usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.values().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Best split as (feature 0-based, threshold, weighted child impurity).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

const IMPROVEMENT_EPS: f64 = 1e-12;

/// Lowest weighted Gini split over midpoints of consecutive distinct values;
/// ties resolve to the lowest feature, then the lowest threshold.
pub fn best_split(data: &Dataset, idx: &[usize]) -> Option<Split> {
    let total = idx.len();
    let mut best: Option<Split> = None;
    for feature in 0..data.n() {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| data.rows[a][feature].total_cmp(&data.rows[b][feature]));
        let mut left: BTreeMap<&str, usize> = BTreeMap::new();
        let mut right: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in &order {
            *right.entry(data.labels[i].as_str()).or_default() += 1;
        }
        for k in 0..total - 1 {
            let i = order[k];
            let label = data.labels[i].as_str();
            *left.entry(label).or_default() += 1;
            let r = right.get_mut(label).expect("counted");
            *r -= 1;
            if *r == 0 {
                right.remove(label);
            }
            let (v, next) = (data.rows[i][feature], data.rows[order[k + 1]][feature]);
            if v == next {
                continue;
            }
            let nl = k + 1;
            let impurity = (nl as f64 * gini(&left, nl) + (total - nl) as f64 * gini(&right, total - nl))
                / total as f64;
            if best.is_none_or(|b| impurity < b.impurity - IMPROVEMENT_EPS) {
                best = Some(Split { feature, threshold: v + (next - v) / 2.0, impurity });
            }
        }
    }
    best
}

/// Greedy CART with Gini impurity, depth at most `max_depth`.
pub fn train_cart(data: &Dataset, max_depth: u32) -> Result<PlainTree<f64>> {
    if data.len() < 2 || data.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    fn grow(data: &Dataset, idx: &[usize], depth_left: u32) -> PlainNode<f64> {
        let label = majority(&data.labels, idx).expect("non-empty node");
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for &i in idx {
            *counts.entry(&data.labels[i]).or_default() += 1;
        }
        let parent = gini(&counts, idx.len());
        if depth_left == 0 || counts.len() == 1 {
            return PlainNode::leaf(label);
        }
        match best_split(data, idx) {
            Some(split) if split.impurity < parent - IMPROVEMENT_EPS => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.iter().partition(|&&i| data.rows[i][split.feature] <= split.threshold);
                PlainNode::internal(
                    split.feature + 1,
                    split.threshold,
                    grow(data, &l, depth_left - 1),
                    grow(data, &r, depth_left - 1),
                )
            }
            _ => PlainNode::leaf(label),
        }
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    PlainTree::new(data.n(), grow(data, &idx, max_depth))
}

/// Fraction of rows a tree labels correctly.
pub fn accuracy(tree: &PlainTree<f64>, data: &Dataset) -> f64 {
    let hits = data.rows.iter().zip(&data.labels).filter(|(x, y)| tree.predict(x) == y.as_str()).count();
    hits as f64 / data.len().max(1) as f64
}
