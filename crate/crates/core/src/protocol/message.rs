//! Entity identities and the framed wire message.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const WIRE_MAGIC: &[u8; 4] = b"OP1M";
/// magic + session + sender + receiver + kind + payload length.
pub const HEADER_LEN: usize = 4 + 16 + 1 + 1 + 1 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityId {
    Kgc,
    Mp,
    Cs1,
    Cs2,
    Du,
}

impl EntityId {
    pub const ALL: [EntityId; 5] = [EntityId::Kgc, EntityId::Mp, EntityId::Cs1, EntityId::Cs2, EntityId::Du];

    pub fn tag(self) -> u8 {
        match self {
            EntityId::Kgc => 1,
            EntityId::Mp => 2,
            EntityId::Cs1 => 3,
            EntityId::Cs2 => 4,
            EntityId::Du => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        EntityId::ALL
            .into_iter()
            .find(|e| e.tag() == tag)
            .ok_or(Error::UnknownEntity(tag))
    }

    pub fn name(self) -> &'static str {
        match self {
            EntityId::Kgc => "KGC",
            EntityId::Mp => "MP",
            EntityId::Cs1 => "CS1",
            EntityId::Cs2 => "CS2",
            EntityId::Du => "DU",
        }
    }

    pub fn is_server(self) -> bool {
        matches!(self, EntityId::Cs1 | EntityId::Cs2)
    }

    /// The other cloud server.
    pub fn peer(self) -> Option<EntityId> {
        match self {
            EntityId::Cs1 => Some(EntityId::Cs2),
            EntityId::Cs2 => Some(EntityId::Cs1),
            _ => None,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    PrepTree,
    PrepRoot,
    SeedCt,
    QueryShares,
    UnitShares,
    FeatureShare,
    FuncKey,
    PartialResult,
    Subtree,
    PlainIndex,
    LeafLabel,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::PrepTree,
        MessageKind::PrepRoot,
        MessageKind::SeedCt,
        MessageKind::QueryShares,
        MessageKind::UnitShares,
        MessageKind::FeatureShare,
        MessageKind::FuncKey,
        MessageKind::PartialResult,
        MessageKind::Subtree,
        MessageKind::PlainIndex,
        MessageKind::LeafLabel,
    ];

    pub fn tag(self) -> u8 {
        MessageKind::ALL.iter().position(|&k| k == self).expect("listed") as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        (tag as usize)
            .checked_sub(1)
            .and_then(|i| MessageKind::ALL.get(i).copied())
            .ok_or_else(|| Error::format(format!("unknown message kind {tag}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::PrepTree => "PrepTree",
            MessageKind::PrepRoot => "PrepRoot",
            MessageKind::SeedCt => "SeedCt",
            MessageKind::QueryShares => "QueryShares",
            MessageKind::UnitShares => "UnitShares",
            MessageKind::FeatureShare => "FeatureShare",
            MessageKind::FuncKey => "FuncKey",
            MessageKind::PartialResult => "PartialResult",
            MessageKind::Subtree => "Subtree",
            MessageKind::PlainIndex => "PlainIndex",
            MessageKind::LeafLabel => "LeafLabel",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Random 128-bit query identifier. The all-zero id marks provisioning traffic.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SessionId(pub [u8; 16]);

impl SessionId {
    pub const SETUP: SessionId = SessionId([0; 16]);

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> SessionId {
        loop {
            let mut id = [0u8; 16];
            rng.fill_bytes(&mut id);
            if id != [0; 16] {
                return SessionId(id);
            }
        }
    }

    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", self.hex())
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub session: SessionId,
    pub from: EntityId,
    pub to: EntityId,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(session: SessionId, from: EntityId, to: EntityId, kind: MessageKind, payload: Vec<u8>) -> Self {
        Message { session, from, to, kind, payload }
    }

    /// Bytes on the wire: fixed header plus payload.
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.wire_len());
        w.bytes(WIRE_MAGIC)
            .bytes(&self.session.0)
            .u8(self.from.tag())
            .u8(self.to.tag())
            .u8(self.kind.tag())
            .var_bytes(&self.payload);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(WIRE_MAGIC)?;
        let session = SessionId(r.array()?);
        let from = EntityId::from_tag(r.u8()?)?;
        let to = EntityId::from_tag(r.u8()?)?;
        let kind = MessageKind::from_tag(r.u8()?)?;
        let payload = r.var_bytes()?.to_vec();
        r.finish()?;
        Ok(Message { session, from, to, kind, payload })
    }
}
