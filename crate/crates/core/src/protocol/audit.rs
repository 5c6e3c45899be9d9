//! Leakage audit of a finished query against the provider's ground truth.

use std::collections::BTreeSet;

use serde::Serialize;

use super::entities::leader_of;
use super::message::{EntityId, MessageKind, SessionId};
use super::payload::Payload;
use super::transcript::{Observation, Transcript};
use crate::error::{Error, Result};
use crate::model_prep::{EncInternalNode, EncryptedTree, PreparedModel};
use crate::primitives::Group;
use crate::tree::{CompleteTree, PredictionPath};

/// Shortest label the byte scan can search for without chance matches.
pub const MIN_SCANNABLE_LABEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub session: String,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(AuditCheck { name, passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn into_result(self) -> Result<AuditReport> {
        if self.passed() {
            return Ok(self);
        }
        let msg = self.failures().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
        Err(Error::Leakage(msg))
    }
}

/// What the auditor knows and the servers must not learn.
pub struct GroundTruth<'a> {
    pub tree: &'a CompleteTree,
    pub prepared: &'a PreparedModel,
    pub path: &'a PredictionPath,
    /// Node records the second server held before the query.
    pub cs2_records_before: usize,
}

/// Audits one session plus the provisioning messages it relies on. Needs a
/// payload-retaining transcript.
pub fn leakage_audit(
    transcript: &Transcript,
    session: SessionId,
    truth: &GroundTruth<'_>,
    group: &Group,
) -> Result<AuditReport> {
    if !transcript.retains_payloads() {
        return Err(Error::Leakage("audit needs a payload-retaining transcript".into()));
    }
    let d = truth.tree.depth();
    let mut report = AuditReport { session: session.to_string(), checks: vec![] };

    // Leadership: every layer decided once, by the server its parity names.
    let mut decided: Vec<(u32, EntityId)> = transcript
        .session_observations(session)
        .filter_map(|o| match *o {
            Observation::Decided { layer, leader, .. } => Some((layer, leader)),
            _ => None,
        })
        .collect();
    decided.sort();
    let expected: Vec<(u32, EntityId)> = (1..=d).map(|l| (l, leader_of(l))).collect();
    report.push("leadership", decided == expected, format!("decisions {decided:?}"));

    report.push(
        "cs2-pre-query-state",
        truth.cs2_records_before == 1,
        format!("{} node record(s) before the query", truth.cs2_records_before),
    );

    // Each server sees exactly the shuffled indexes of the path nodes.
    let positions = truth.path.positions();
    let path_indexes: Vec<(u32, u32)> = positions
        .iter()
        .enumerate()
        .map(|(k, &pos)| (k as u32 + 1, truth.prepared.index_map.index_of(pos)))
        .collect();
    for server in [EntityId::Cs1, EntityId::Cs2] {
        let mut seen: Vec<(u32, u32)> = transcript
            .session_observations(session)
            .filter_map(|o| match *o {
                Observation::IndexRevealed { server: s, layer, index, .. } if s == server => Some((layer, index)),
                _ => None,
            })
            .collect();
        seen.sort();
        let name = if server == EntityId::Cs1 { "cs1-plain-indexes" } else { "cs2-plain-indexes" };
        report.push(name, seen == path_indexes, format!("{} index(es) for depth {d}", seen.len()));
    }

    let entries: Vec<_> = transcript
        .entries()
        .iter()
        .filter(|e| e.session == session || e.session == SessionId::SETUP)
        .collect();
    let uploads = entries.iter().filter(|e| e.session == session && e.from == EntityId::Du).count();
    let downloads = entries.iter().filter(|e| e.session == session && e.to == EntityId::Du).count();
    report.push("one-shot-user", uploads == 3 && downloads == 1, format!("{uploads} upload(s), {downloads} download(s)"));

    // Decode every payload; tree-bearing ones yield opaque fields to scan.
    let mut raw: Vec<&[u8]> = vec![];
    let mut opaque: Vec<Vec<u8>> = vec![];
    let mut one_hot = 0usize;
    let mut ring_width = 0usize;
    for e in &entries {
        let bytes = e.payload.as_deref().expect("retained payload");
        raw.push(bytes);
        let mut node_fields = |node: &EncInternalNode, tree_params: &crate::params::ProtocolParams| {
            let width = tree_params.ring.width();
            ring_width = ring_width.max(width);
            if is_one_hot(&node.masked_feature) {
                one_hot += 1;
            }
            for &v in &node.masked_feature {
                opaque.push(v.to_be_bytes()[8 - width..].to_vec());
            }
            opaque.push(group.encode_element(&node.coefficients.ct0));
            for c in &node.coefficients.ct {
                opaque.push(group.encode_element(c));
            }
            opaque.push(node.index_ct.clone());
        };
        match Payload::decode(e.kind, group, bytes)? {
            Payload::PrepTree(tree) | Payload::Subtree(tree) => {
                let EncryptedTree { params, nodes, leaves, .. } = &tree;
                for node in nodes {
                    node_fields(node, params);
                }
                opaque.extend(leaves.iter().map(|l| l.label_ct.clone()));
            }
            Payload::PrepRoot(root) => node_fields(&root.root, &root.params),
            Payload::SeedCt(ct) | Payload::LeafLabel(ct) => opaque.push(ct),
            _ => {}
        }
    }
    report.push("masked-selectors", one_hot == 0, format!("{one_hot} selector(s) sent as a plain one-hot vector"));

    // Plaintext labels anywhere on the wire.
    let labels: BTreeSet<&str> = truth.tree.leaves().iter().map(String::as_str).collect();
    let (scannable, short): (Vec<&str>, Vec<&str>) = labels.iter().partition(|l| l.len() >= MIN_SCANNABLE_LABEL);
    let label_hits = scannable
        .iter()
        .filter(|l| raw.iter().any(|p| contains(p, l.as_bytes())))
        .count();
    let mut detail = format!("{label_hits} of {} label(s) found", scannable.len());
    if !short.is_empty() {
        detail.push_str(&format!(", {} too short to scan", short.len()));
    }
    report.push("plaintext-labels", label_hits == 0, detail);

    // (feature, threshold) fingerprints of real nodes inside opaque fields.
    let real: Vec<(u32, u64)> = truth
        .tree
        .nodes()
        .iter()
        .filter(|n| !n.dummy)
        .map(|n| (n.feature, n.threshold))
        .collect();
    let fingerprints: BTreeSet<[u8; 8]> = real
        .iter()
        .map(|&(f, t)| {
            let mut fp = [0u8; 8];
            fp[..4].copy_from_slice(&f.to_be_bytes());
            fp[4..].copy_from_slice(&(t as u32).to_be_bytes());
            fp
        })
        .collect();
    let fp_hits = opaque
        .iter()
        .map(|field| field.windows(8).filter(|w| fingerprints.contains(*w)).count())
        .sum::<usize>();
    report.push("node-fingerprints", fp_hits == 0, format!("{fp_hits} (feature, threshold) fingerprint(s) found"));

    // Ring-width threshold encodings must occur no more often than in random bytes.
    let width = ring_width.max(1);
    let thresholds: BTreeSet<Vec<u8>> =
        real.iter().map(|&(_, t)| t.to_be_bytes()[8 - width..].to_vec()).collect();
    let windows: usize = opaque.iter().map(|f| f.len().saturating_sub(width - 1)).sum();
    let observed = opaque
        .iter()
        .map(|field| field.windows(width).filter(|w| thresholds.contains(*w)).count())
        .sum::<usize>() as f64;
    let expected = windows as f64 * thresholds.len() as f64 / 256f64.powi(width as i32);
    let limit = expected + 6.0 * expected.sqrt() + 4.0;
    report.push(
        "threshold-frequency",
        observed <= limit,
        format!("{observed} hit(s) in {windows} window(s), {expected:.2} expected by chance, limit {limit:.2}"),
    );

    // The one-path counters the transcript implies.
    let counters = transcript.counters(session)?;
    report.push(
        "one-path",
        counters.sine_evaluations == d as u64 && counters.fe_decryptions == 2 * d as u64,
        format!("{} evaluation(s), {} FE decryption(s)", counters.sine_evaluations, counters.fe_decryptions),
    );
    let stray = entries
        .iter()
        .filter(|e| e.session == session && e.kind == MessageKind::PlainIndex && !(e.from.is_server() && e.to.is_server()))
        .count();
    report.push("plain-index-routing", stray == 0, format!("{stray} plain index(es) left the server pair"));
    Ok(report)
}

fn is_one_hot(v: &[u64]) -> bool {
    v.iter().filter(|&&e| e == 1).count() == 1 && v.iter().all(|&e| e <= 1)
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
