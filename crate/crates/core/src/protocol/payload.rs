//! Typed payloads for each message kind.

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ipfe::FunctionalKey;
use crate::model_prep::{EncryptedTree, RootPayload};
use crate::primitives::Group;
use crate::sharing::{RingParams, ShareVector, UnitShares};

use super::message::MessageKind;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    PrepTree(EncryptedTree),
    PrepRoot(RootPayload),
    SeedCt(Vec<u8>),
    QueryShares(ShareVector),
    UnitShares { ring: RingParams, shares: UnitShares },
    FeatureShare { layer: u32, value: u64 },
    FuncKey { layer: u32, key: FunctionalKey },
    PartialResult { layer: u32, partial: i64 },
    Subtree(EncryptedTree),
    PlainIndex { layer: u32, index: u32 },
    LeafLabel(Vec<u8>),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::PrepTree(_) => MessageKind::PrepTree,
            Payload::PrepRoot(_) => MessageKind::PrepRoot,
            Payload::SeedCt(_) => MessageKind::SeedCt,
            Payload::QueryShares(_) => MessageKind::QueryShares,
            Payload::UnitShares { .. } => MessageKind::UnitShares,
            Payload::FeatureShare { .. } => MessageKind::FeatureShare,
            Payload::FuncKey { .. } => MessageKind::FuncKey,
            Payload::PartialResult { .. } => MessageKind::PartialResult,
            Payload::Subtree(_) => MessageKind::Subtree,
            Payload::PlainIndex { .. } => MessageKind::PlainIndex,
            Payload::LeafLabel(_) => MessageKind::LeafLabel,
        }
    }

    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Payload::PrepTree(tree) | Payload::Subtree(tree) => tree.write(group, &mut w),
            Payload::PrepRoot(root) => return root.encode(group),
            Payload::SeedCt(ct) | Payload::LeafLabel(ct) => {
                w.bytes(ct);
            }
            Payload::QueryShares(shares) => return shares.encode(),
            Payload::UnitShares { ring, shares } => {
                w.u8(ring.bits() as u8).u32(shares.first as u32).u32(shares.second as u32);
            }
            Payload::FeatureShare { layer, value } => {
                w.u32(*layer).u32(*value as u32);
            }
            Payload::FuncKey { layer, key } => {
                w.u32(*layer);
                key.write(group, &mut w);
            }
            Payload::PartialResult { layer, partial } => {
                w.u32(*layer).i64(*partial);
            }
            Payload::PlainIndex { layer, index } => {
                w.u32(*layer).u32(*index);
            }
        }
        w.finish()
    }

    pub fn decode(kind: MessageKind, group: &Group, bytes: &[u8]) -> Result<Payload> {
        let mut r = Reader::new(bytes);
        let payload = match kind {
            MessageKind::PrepTree => Payload::PrepTree(EncryptedTree::read(group, &mut r)?),
            MessageKind::Subtree => Payload::Subtree(EncryptedTree::read(group, &mut r)?),
            MessageKind::PrepRoot => return Ok(Payload::PrepRoot(RootPayload::decode(group, bytes)?)),
            MessageKind::SeedCt => return Ok(Payload::SeedCt(bytes.to_vec())),
            MessageKind::LeafLabel => return Ok(Payload::LeafLabel(bytes.to_vec())),
            MessageKind::QueryShares => return Ok(Payload::QueryShares(ShareVector::decode(bytes)?)),
            MessageKind::UnitShares => {
                let ring = RingParams::new(r.u8()? as u32)?;
                let first = r.u32()? as u64;
                let second = r.u32()? as u64;
                if first > ring.mask() || second > ring.mask() {
                    return Err(Error::format("unit share exceeds ring"));
                }
                Payload::UnitShares { ring, shares: UnitShares { first, second } }
            }
            MessageKind::FeatureShare => Payload::FeatureShare { layer: r.u32()?, value: r.u32()? as u64 },
            MessageKind::FuncKey => {
                let layer = r.u32()?;
                Payload::FuncKey { layer, key: FunctionalKey::read(group, &mut r)? }
            }
            MessageKind::PartialResult => Payload::PartialResult { layer: r.u32()?, partial: r.i64()? },
            MessageKind::PlainIndex => Payload::PlainIndex { layer: r.u32()?, index: r.u32()? },
        };
        r.finish()?;
        Ok(payload)
    }
}

/// Record count of an encoded (sub)tree payload, read from its header alone.
pub(crate) fn tree_record_count(bytes: &[u8]) -> Result<u64> {
    let mut r = Reader::new(bytes);
    r.magic(b"OP1T")?;
    r.u8()?;
    r.u32()?;
    let depth = r.u32()?;
    if depth == 0 || depth > crate::tree::MAX_DEPTH {
        return Err(Error::format(format!("subtree depth {depth}")));
    }
    Ok((1u64 << (depth + 1)) - 1)
}
