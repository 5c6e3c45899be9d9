//! Append-only message log with byte, round and compute-time accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::message::{EntityId, Message, MessageKind, SessionId};
use super::payload::tree_record_count;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub session: SessionId,
    pub from: EntityId,
    pub to: EntityId,
    pub kind: MessageKind,
    /// Header plus payload.
    pub bytes: usize,
    /// Length of the causal chain ending in this message.
    pub round: u32,
    /// First 8 bytes of SHA-256 over the payload.
    pub digest: [u8; 8],
    /// Nanoseconds since the network started; excluded from canonical exports.
    pub t_ns: u64,
    /// Full payload, kept when the transcript retains payloads.
    pub payload: Option<Vec<u8>>,
}

/// Facts an entity observed locally (never on the wire). Used to cross-check
/// the counters derived from the message log and to audit leakage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Observation {
    /// A server learned a plaintext shuffled index.
    IndexRevealed { session: SessionId, server: EntityId, layer: u32, index: u32 },
    /// A server recovered its partial from a functional key.
    FeDecrypted { session: SessionId, server: EntityId, layer: u32 },
    /// The layer leader reconstructed R and chose a branch.
    Decided { session: SessionId, leader: EntityId, layer: u32, value: i64, right: bool },
    /// A leader shipped a child subtree of `records` node records.
    SubtreeShipped { session: SessionId, from: EntityId, records: u64 },
}

impl Observation {
    pub fn session(&self) -> SessionId {
        match self {
            Observation::IndexRevealed { session, .. }
            | Observation::FeDecrypted { session, .. }
            | Observation::Decided { session, .. }
            | Observation::SubtreeShipped { session, .. } => *session,
        }
    }
}

/// Per-session counters derived from the message log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SessionCounters {
    pub messages: u64,
    pub bytes: u64,
    /// One partial result crosses between the servers per evaluated node.
    pub sine_evaluations: u64,
    /// One functional key per server per evaluated node.
    pub fe_decryptions: u64,
    pub subtree_messages: u64,
    /// Node records in subtree messages between the servers.
    pub server_subtree_records: u64,
    /// Server subtree records plus the terminal leaf record sent to the user.
    pub subtree_nodes_sent: u64,
    pub rounds: u32,
    pub user_uploads: u64,
    pub user_downloads: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    observations: Vec<Observation>,
    compute_ns: BTreeMap<EntityId, u64>,
    retain_payloads: bool,
}

impl Transcript {
    pub fn new(retain_payloads: bool) -> Self {
        Transcript { retain_payloads, ..Default::default() }
    }

    pub fn retains_payloads(&self) -> bool {
        self.retain_payloads
    }

    pub(crate) fn record(&mut self, msg: &Message, round: u32, t_ns: u64) -> &TranscriptEntry {
        let digest: [u8; 8] = Sha256::digest(&msg.payload)[..8].try_into().expect("8 bytes");
        self.entries.push(TranscriptEntry {
            seq: self.entries.len() as u64,
            session: msg.session,
            from: msg.from,
            to: msg.to,
            kind: msg.kind,
            bytes: msg.wire_len(),
            round,
            digest,
            t_ns,
            payload: self.retain_payloads.then(|| msg.payload.clone()),
        });
        self.entries.last().expect("just pushed")
    }

    pub(crate) fn observe(&mut self, obs: Observation) {
        self.observations.push(obs);
    }

    pub(crate) fn add_compute(&mut self, entity: EntityId, ns: u64) {
        *self.compute_ns.entry(entity).or_default() += ns;
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn session_entries(&self, session: SessionId) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.iter().filter(move |e| e.session == session)
    }

    pub fn session_observations(&self, session: SessionId) -> impl Iterator<Item = &Observation> {
        self.observations.iter().filter(move |o| o.session() == session)
    }

    /// Accumulated compute time per entity, transport excluded.
    pub fn compute_ns(&self) -> &BTreeMap<EntityId, u64> {
        &self.compute_ns
    }

    pub fn edge_bytes(&self, session: Option<SessionId>) -> BTreeMap<(EntityId, EntityId), u64> {
        let mut out = BTreeMap::new();
        for e in self.entries.iter().filter(|e| session.is_none_or(|s| s == e.session)) {
            *out.entry((e.from, e.to)).or_default() += e.bytes as u64;
        }
        out
    }

    pub fn counters(&self, session: SessionId) -> Result<SessionCounters> {
        let mut c = SessionCounters::default();
        for e in self.session_entries(session) {
            c.messages += 1;
            c.bytes += e.bytes as u64;
            c.rounds = c.rounds.max(e.round);
            match e.kind {
                MessageKind::PartialResult => c.sine_evaluations += 1,
                MessageKind::FuncKey => c.fe_decryptions += 1,
                MessageKind::Subtree => {
                    c.subtree_messages += 1;
                    let payload = e.payload.as_deref().ok_or_else(|| {
                        Error::Leakage("subtree sizes need a payload-retaining transcript".into())
                    })?;
                    c.server_subtree_records += tree_record_count(payload)?;
                }
                MessageKind::LeafLabel => {
                    c.user_downloads += 1;
                    c.subtree_nodes_sent += 1;
                }
                MessageKind::QueryShares | MessageKind::UnitShares => c.user_uploads += 1,
                _ => {}
            }
        }
        c.subtree_nodes_sent += c.server_subtree_records;
        Ok(c)
    }

    /// Counters from the log must agree with what the entities observed.
    pub fn cross_check(&self, session: SessionId) -> Result<SessionCounters> {
        let c = self.counters(session)?;
        let (mut decided, mut decrypted, mut shipped) = (0u64, 0u64, 0u64);
        for o in self.session_observations(session) {
            match o {
                Observation::Decided { .. } => decided += 1,
                Observation::FeDecrypted { .. } => decrypted += 1,
                Observation::SubtreeShipped { records, .. } => shipped += records,
                Observation::IndexRevealed { .. } => {}
            }
        }
        let check = |name: &str, log: u64, seen: u64| {
            if log == seen {
                Ok(())
            } else {
                Err(Error::OracleMismatch(format!("{name}: log says {log}, entities observed {seen}")))
            }
        };
        check("sine evaluations", c.sine_evaluations, decided)?;
        check("FE decryptions", c.fe_decryptions, decrypted)?;
        check("subtree records", c.server_subtree_records, shipped)?;
        Ok(c)
    }

    /// One JSON object per message. `timed` adds the wall-clock `t_ns` field,
    /// which makes the export run-dependent.
    pub fn to_jsonl(&self, timed: bool) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let digest: String = e.digest.iter().map(|b| format!("{b:02x}")).collect();
            write!(
                out,
                "{{\"seq\":{},\"session\":\"{}\",\"from\":\"{}\",\"to\":\"{}\",\"kind\":\"{}\",\"bytes\":{},\"round\":{},\"digest\":\"{}\"",
                e.seq, e.session, e.from, e.to, e.kind, e.bytes, e.round, digest
            )
            .expect("write to string");
            if timed {
                write!(out, ",\"t_ns\":{}", e.t_ns).expect("write to string");
            }
            out.push_str("}\n");
        }
        out
    }

    /// Timing-free export; identical across runs with identical seeds.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.to_jsonl(false).into_bytes()
    }

    pub fn canonical_digest(&self) -> String {
        Sha256::digest(self.canonical_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(kind: MessageKind, payload: Vec<u8>) -> Message {
        Message::new(SessionId([1; 16]), EntityId::Cs1, EntityId::Cs2, kind, payload)
    }

    #[test]
    fn counters_and_exports() {
        let mut t = Transcript::new(true);
        t.record(&msg(MessageKind::PartialResult, vec![0; 12]), 1, 50);
        t.record(&msg(MessageKind::FuncKey, vec![0; 40]), 2, 70);
        t.observe(Observation::Decided {
            session: SessionId([1; 16]),
            leader: EntityId::Cs2,
            layer: 1,
            value: 3,
            right: true,
        });
        let c = t.counters(SessionId([1; 16])).unwrap();
        assert_eq!((c.messages, c.sine_evaluations, c.fe_decryptions, c.rounds), (2, 1, 1, 2));
        assert_eq!(c.bytes, (12 + 40 + 2 * super::super::message::HEADER_LEN) as u64);
        // One decryption logged, none observed.
        assert!(t.cross_check(SessionId([1; 16])).is_err());

        let timed = t.to_jsonl(true);
        assert!(timed.contains("\"t_ns\":70"));
        assert!(!t.to_jsonl(false).contains("t_ns"));
        assert_eq!(t.to_jsonl(false).lines().count(), 2);
        t.add_compute(EntityId::Kgc, 5);
        t.add_compute(EntityId::Kgc, 6);
        assert_eq!(t.compute_ns()[&EntityId::Kgc], 11);
        assert_eq!(t.edge_bytes(None)[&(EntityId::Cs1, EntityId::Cs2)], c.bytes);
    }
}
