//! The five protocol entities as message-driven state machines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand::{CryptoRng, RngCore};
use rand_chacha::ChaCha20Rng;

use super::message::{EntityId, Message, MessageKind, SessionId};
use super::payload::Payload;
use super::transcript::Observation;
use super::transport::{Actor, Outbox};
use crate::error::{Error, Result};
use crate::input_share::{decrypt_result, open_seed, prepare_query, PreparedQuery};
use crate::ipfe::{ipfe_decrypt, ipfe_keyder, IpfePublicKey, IpfeSecretKey};
use crate::model_prep::{Branch, Child, EncInternalNode, EncryptedTree, PreparedModel, RootPayload};
use crate::params::ProtocolParams;
use crate::primitives::ske::decode_index;
use crate::primitives::{DlogTable, Group, PrfSeed, SymmetricKey};
use crate::sharing::{Party, ShareVector, UnitShares};

/// Leader of `layer`: the first server on odd layers, the second on even ones.
pub fn leader_of(layer: u32) -> EntityId {
    if layer % 2 == 1 {
        EntityId::Cs1
    } else {
        EntityId::Cs2
    }
}

fn party_of(server: EntityId) -> Party {
    match server {
        EntityId::Cs1 => Party::First,
        _ => Party::Second,
    }
}

fn expect_from(entity: EntityId, msg: &Message, allowed: &[EntityId]) -> Result<()> {
    if allowed.contains(&msg.from) {
        Ok(())
    } else {
        Err(Error::protocol(entity, format!("{} from {} is not expected", msg.kind, msg.from)))
    }
}

/// Key generation center: holds the FE master secret and both shares of 1,
/// and derives one functional key per (session, layer, server).
pub struct Kgc {
    group: Group,
    msk: IpfeSecretKey,
    params: ProtocolParams,
    sessions: HashMap<SessionId, KgcSession>,
    issued: HashSet<(SessionId, u32, EntityId)>,
}

#[derive(Default)]
struct KgcSession {
    units: Option<UnitShares>,
    waiting: Vec<(EntityId, u32, u64)>,
}

impl Kgc {
    pub fn new(group: Group, msk: IpfeSecretKey, params: ProtocolParams) -> Self {
        Kgc { group, msk, params, sessions: HashMap::new(), issued: HashSet::new() }
    }

    pub fn keys_issued(&self) -> usize {
        self.issued.len()
    }

    fn issue(&self, session: SessionId, server: EntityId, layer: u32, value: u64, units: &UnitShares, out: &mut Outbox) {
        let key = ipfe_keyder(&self.msk, [units.for_party(party_of(server)), value]);
        let payload = Payload::FuncKey { layer, key }.encode(&self.group);
        out.send(Message::new(session, EntityId::Kgc, server, MessageKind::FuncKey, payload));
    }
}

impl Actor for Kgc {
    fn id(&self) -> EntityId {
        EntityId::Kgc
    }

    fn handle(&mut self, msg: &Message, out: &mut Outbox) -> Result<()> {
        let me = EntityId::Kgc;
        match Payload::decode(msg.kind, &self.group, &msg.payload)? {
            Payload::SeedCt(ct) => {
                expect_from(me, msg, &[EntityId::Mp])?;
                out.send(Message::new(msg.session, me, EntityId::Du, MessageKind::SeedCt, ct));
            }
            Payload::UnitShares { ring, shares } => {
                expect_from(me, msg, &[EntityId::Du])?;
                if ring != self.params.ring {
                    return Err(Error::protocol(me, "unit shares over the wrong ring"));
                }
                let state = self.sessions.entry(msg.session).or_default();
                if state.units.is_some() {
                    return Err(Error::Replay { entity: me, reason: format!("second unit upload for {}", msg.session) });
                }
                state.units = Some(shares);
                let waiting = std::mem::take(&mut state.waiting);
                for (server, layer, value) in waiting {
                    self.issue(msg.session, server, layer, value, &shares, out);
                }
            }
            Payload::FeatureShare { layer, value } => {
                expect_from(me, msg, &[EntityId::Cs1, EntityId::Cs2])?;
                if value > self.params.ring.mask() {
                    return Err(Error::KeyVectorOutOfRange { value, bits: self.params.ring.bits() });
                }
                if !self.issued.insert((msg.session, layer, msg.from)) {
                    return Err(Error::Replay {
                        entity: me,
                        reason: format!("{} asked twice for layer {layer} of {}", msg.from, msg.session),
                    });
                }
                let state = self.sessions.entry(msg.session).or_default();
                match state.units {
                    Some(units) => self.issue(msg.session, msg.from, layer, value, &units, out),
                    None => state.waiting.push((msg.from, layer, value)),
                }
            }
            _ => return Err(Error::protocol(me, format!("unexpected {}", msg.kind))),
        }
        Ok(())
    }
}

/// Model provider: prepares the tree once, then only serves as ground truth.
pub struct ModelProvider {
    group: Group,
    prepared: PreparedModel,
}

impl ModelProvider {
    pub fn new(group: Group, prepared: PreparedModel) -> Self {
        ModelProvider { group, prepared }
    }

    pub fn prepared(&self) -> &PreparedModel {
        &self.prepared
    }

    /// Provisioning messages: the tree to CS1, the root to CS2, the seed to the KGC.
    pub fn provisioning(&self) -> Vec<Message> {
        let s = SessionId::SETUP;
        let mp = EntityId::Mp;
        vec![
            Message::new(
                s,
                mp,
                EntityId::Cs1,
                MessageKind::PrepTree,
                Payload::PrepTree(self.prepared.cs1_tree.clone()).encode(&self.group),
            ),
            Message::new(
                s,
                mp,
                EntityId::Cs2,
                MessageKind::PrepRoot,
                Payload::PrepRoot(self.prepared.cs2_root.clone()).encode(&self.group),
            ),
            Message::new(s, mp, EntityId::Kgc, MessageKind::SeedCt, self.prepared.seed_ct.clone()),
        ]
    }
}

impl Actor for ModelProvider {
    fn id(&self) -> EntityId {
        EntityId::Mp
    }

    fn handle(&mut self, msg: &Message, _out: &mut Outbox) -> Result<()> {
        Err(Error::protocol(EntityId::Mp, format!("provider received {}", msg.kind)))
    }
}

/// Per-session state of one cloud server.
#[derive(Default)]
struct ServerSession {
    shares: Option<ShareVector>,
    /// Layer being evaluated, 0 before the query starts.
    layer: u32,
    node: Option<EncInternalNode>,
    index: Option<u32>,
    /// Tree rooted at the current node, held by the layer leader.
    tree: Option<EncryptedTree>,
    /// Subtree shipped to the peer, kept while waiting for its plain index.
    shipped: Option<EncryptedTree>,
    requested_value: Option<u64>,
    own_partial: Option<i64>,
    peer_partials: BTreeMap<u32, i64>,
    decrypted_layers: HashSet<u32>,
    done: bool,
}

/// One of the two cloud servers.
pub struct Server {
    id: EntityId,
    key: SymmetricKey,
    group: Group,
    mpk: Arc<IpfePublicKey>,
    table: Arc<DlogTable>,
    full_tree: Option<EncryptedTree>,
    root: Option<RootPayload>,
    sessions: HashMap<SessionId, ServerSession>,
}

impl Server {
    pub fn new(id: EntityId, key: SymmetricKey, group: Group, mpk: Arc<IpfePublicKey>, table: Arc<DlogTable>) -> Self {
        assert!(id.is_server());
        Server { id, key, group, mpk, table, full_tree: None, root: None, sessions: HashMap::new() }
    }

    pub fn id(&self) -> EntityId {
        self.id
    }

    /// Node records in long-term storage (query state excluded).
    pub fn stored_records(&self) -> usize {
        self.full_tree.as_ref().map_or(0, EncryptedTree::record_count) + self.root.is_some() as usize
    }

    fn shape(&self) -> Result<(ProtocolParams, usize, u32)> {
        if let Some(t) = &self.full_tree {
            return Ok((t.params, t.n, t.depth));
        }
        if let Some(r) = &self.root {
            return Ok((r.params, r.n, r.depth));
        }
        Err(Error::protocol(self.id, "query before provisioning"))
    }

    fn peer(&self) -> EntityId {
        self.id.peer().expect("server")
    }

    fn reveal(&self, session: SessionId, layer: u32, index_ct: &[u8], out: &mut Outbox) -> Result<u32> {
        let index = decode_index(&self.key.decrypt(index_ct)?)?;
        out.observe(Observation::IndexRevealed { session, server: self.id, layer, index });
        Ok(index)
    }

    /// Sends `<x_i>^p = e'^T <x>^p + <x_d>^p` to the key center.
    fn request_key(&self, session: SessionId, state: &mut ServerSession, out: &mut Outbox) -> Result<()> {
        let shares = state.shares.as_ref().ok_or_else(|| Error::protocol(self.id, "no shares"))?;
        let node = state.node.as_ref().expect("node set before requesting");
        let index = state.index.expect("index set before requesting");
        let offset = *shares
            .offsets
            .get(index as usize - 1)
            .ok_or(Error::NodeIndexOutOfRange { index, gamma: shares.gamma() as u32 })?;
        let ring = shares.ring;
        let value = ring.add(ring.dot(&node.masked_feature, &shares.features)?, offset);
        state.requested_value = Some(value);
        state.own_partial = None;
        let payload = Payload::FeatureShare { layer: state.layer, value }.encode(&self.group);
        out.send(Message::new(session, self.id, EntityId::Kgc, MessageKind::FeatureShare, payload));
        Ok(())
    }

    fn start(&mut self, session: SessionId, shares: ShareVector, out: &mut Outbox) -> Result<()> {
        let (params, n, depth) = self.shape()?;
        let gamma = (1usize << depth) - 1;
        if shares.party != party_of(self.id) || shares.ring != params.ring {
            return Err(Error::protocol(self.id, "shares for another party or ring"));
        }
        if shares.n() != n || shares.gamma() != gamma {
            return Err(Error::ShapeMismatch(format!(
                "query has n = {}, γ = {}; tree has n = {n}, γ = {gamma}",
                shares.n(),
                shares.gamma()
            )));
        }
        let (root, tree) = match (&self.full_tree, &self.root) {
            (Some(t), _) => (t.root().clone(), Some(t.clone())),
            (None, Some(r)) => (r.root.clone(), None),
            _ => unreachable!("shape checked"),
        };
        let index = self.reveal(session, 1, &root.index_ct, out)?;
        let mut state = self.sessions.remove(&session).unwrap_or_default();
        if state.shares.is_some() {
            return Err(Error::Replay { entity: self.id, reason: format!("second upload for {session}") });
        }
        state.shares = Some(shares);
        state.layer = 1;
        state.node = Some(root);
        state.index = Some(index);
        state.tree = tree;
        let result = self.request_key(session, &mut state, out);
        self.sessions.insert(session, state);
        result
    }

    fn on_func_key(&mut self, session: SessionId, layer: u32, key: crate::ipfe::FunctionalKey, out: &mut Outbox) -> Result<()> {
        let mut state = self.sessions.remove(&session).ok_or_else(|| Error::protocol(self.id, "key for unknown session"))?;
        let result = (|| {
            if layer != state.layer || state.own_partial.is_some() || !state.decrypted_layers.insert(layer) {
                return Err(Error::protocol(self.id, format!("key for layer {layer} while at layer {}", state.layer)));
            }
            if Some(key.y[1]) != state.requested_value {
                return Err(Error::protocol(self.id, "functional key is bound to another feature share"));
            }
            let node = state.node.as_ref().expect("evaluating a node");
            let partial = ipfe_decrypt(&self.mpk, &node.coefficients, &key, &self.table)?;
            out.observe(Observation::FeDecrypted { session, server: self.id, layer });
            if leader_of(layer) == self.id {
                state.own_partial = Some(partial);
                self.try_decide(session, &mut state, out)
            } else {
                let payload = Payload::PartialResult { layer, partial }.encode(&self.group);
                out.send(Message::new(session, self.id, self.peer(), MessageKind::PartialResult, payload));
                Ok(())
            }
        })();
        self.sessions.insert(session, state);
        result
    }

    fn try_decide(&self, session: SessionId, state: &mut ServerSession, out: &mut Outbox) -> Result<()> {
        let layer = state.layer;
        let (Some(own), Some(&peer)) = (state.own_partial, state.peer_partials.get(&layer)) else {
            return Ok(());
        };
        let ring = state.shares.as_ref().expect("started").ring;
        let sum = (own as i128 + peer as i128).rem_euclid(ring.modulus() as i128) as u64;
        let value = ring.signed_decode(sum);
        let right = value > 1;
        out.observe(Observation::Decided { session, leader: self.id, layer, value, right });
        let tree = state.tree.take().ok_or_else(|| Error::protocol(self.id, "leader without the subtree"))?;
        match tree.child(Branch::from_right(right)) {
            Child::Leaf(leaf) => {
                state.done = true;
                out.send(Message::new(session, self.id, EntityId::Du, MessageKind::LeafLabel, leaf.label_ct));
            }
            Child::Subtree(mut sub) => {
                // Peel this server's layer off the child's index.
                sub.nodes[0].index_ct = self.key.decrypt(&sub.nodes[0].index_ct)?;
                out.observe(Observation::SubtreeShipped { session, from: self.id, records: sub.record_count() as u64 });
                let payload = Payload::Subtree(sub.clone()).encode(&self.group);
                out.send(Message::new(session, self.id, self.peer(), MessageKind::Subtree, payload));
                state.shipped = Some(sub);
            }
        }
        Ok(())
    }

    fn on_partial(&mut self, session: SessionId, layer: u32, partial: i64, out: &mut Outbox) -> Result<()> {
        if leader_of(layer) != self.id {
            return Err(Error::protocol(self.id, format!("partial for layer {layer}, which this server does not lead")));
        }
        let mut state = self.sessions.remove(&session).unwrap_or_default();
        let result = if state.peer_partials.insert(layer, partial).is_some() {
            Err(Error::Replay { entity: self.id, reason: format!("second partial for layer {layer}") })
        } else if state.layer == layer {
            self.try_decide(session, &mut state, out)
        } else {
            Ok(())
        };
        self.sessions.insert(session, state);
        result
    }

    fn on_subtree(&mut self, session: SessionId, sub: EncryptedTree, out: &mut Outbox) -> Result<()> {
        let mut state = self.sessions.remove(&session).ok_or_else(|| Error::protocol(self.id, "subtree for unknown session"))?;
        let result = (|| {
            let layer = sub.root_layer;
            let (_, n, depth) = self.shape()?;
            if layer != state.layer + 1 || leader_of(state.layer) == self.id || leader_of(layer) != self.id {
                return Err(Error::protocol(self.id, format!("subtree rooted at layer {layer} while at layer {}", state.layer)));
            }
            if sub.n != n || sub.depth + layer - 1 != depth {
                return Err(Error::protocol(self.id, "malformed subtree"));
            }
            let index = self.reveal(session, layer, &sub.root().index_ct, out)?;
            let payload = Payload::PlainIndex { layer, index }.encode(&self.group);
            out.send(Message::new(session, self.id, self.peer(), MessageKind::PlainIndex, payload));
            state.layer = layer;
            state.node = Some(sub.root().clone());
            state.index = Some(index);
            state.tree = Some(sub);
            self.request_key(session, &mut state, out)
        })();
        self.sessions.insert(session, state);
        result
    }

    fn on_plain_index(&mut self, session: SessionId, layer: u32, index: u32, out: &mut Outbox) -> Result<()> {
        let mut state = self.sessions.remove(&session).ok_or_else(|| Error::protocol(self.id, "index for unknown session"))?;
        let result = (|| {
            let shipped = state
                .shipped
                .take()
                .filter(|s| s.root_layer == layer && layer == state.layer + 1)
                .ok_or_else(|| Error::protocol(self.id, format!("unrequested plain index for layer {layer}")))?;
            out.observe(Observation::IndexRevealed { session, server: self.id, layer, index });
            state.layer = layer;
            state.node = Some(shipped.root().clone());
            state.index = Some(index);
            self.request_key(session, &mut state, out)
        })();
        self.sessions.insert(session, state);
        result
    }

    /// Whether the server finished its part of `session`.
    pub fn finished(&self, session: SessionId) -> bool {
        self.sessions.get(&session).is_some_and(|s| s.done)
    }

    /// Drops per-query state.
    pub fn forget(&mut self, session: SessionId) {
        self.sessions.remove(&session);
    }
}

impl Actor for Server {
    fn id(&self) -> EntityId {
        self.id
    }

    fn handle(&mut self, msg: &Message, out: &mut Outbox) -> Result<()> {
        let me = self.id;
        let peer = self.peer();
        match Payload::decode(msg.kind, &self.group, &msg.payload)? {
            Payload::PrepTree(tree) if me == EntityId::Cs1 => {
                expect_from(me, msg, &[EntityId::Mp])?;
                self.full_tree = Some(tree);
            }
            Payload::PrepRoot(root) if me == EntityId::Cs2 => {
                expect_from(me, msg, &[EntityId::Mp])?;
                self.root = Some(root);
            }
            Payload::QueryShares(shares) => {
                expect_from(me, msg, &[EntityId::Du])?;
                self.start(msg.session, shares, out)?;
            }
            Payload::FuncKey { layer, key } => {
                expect_from(me, msg, &[EntityId::Kgc])?;
                self.on_func_key(msg.session, layer, key, out)?;
            }
            Payload::PartialResult { layer, partial } => {
                expect_from(me, msg, &[peer])?;
                self.on_partial(msg.session, layer, partial, out)?;
            }
            Payload::Subtree(sub) => {
                expect_from(me, msg, &[peer])?;
                self.on_subtree(msg.session, sub, out)?;
            }
            Payload::PlainIndex { layer, index } => {
                expect_from(me, msg, &[peer])?;
                self.on_plain_index(msg.session, layer, index, out)?;
            }
            _ => return Err(Error::protocol(me, format!("unexpected {} from {}", msg.kind, msg.from))),
        }
        Ok(())
    }
}

/// Data user: prepares one upload per query and decrypts the returned label.
pub struct DataUser {
    group: Group,
    sk3: SymmetricKey,
    params: ProtocolParams,
    seed: Option<PrfSeed>,
    outstanding: HashSet<SessionId>,
    results: HashMap<SessionId, Vec<u8>>,
}

impl DataUser {
    pub fn new(group: Group, sk3: SymmetricKey, params: ProtocolParams) -> Self {
        DataUser { group, sk3, params, seed: None, outstanding: HashSet::new(), results: HashMap::new() }
    }

    pub fn has_seed(&self) -> bool {
        self.seed.is_some()
    }

    /// Shares `x` and returns the three upload messages.
    pub fn prepare<R: RngCore + CryptoRng>(&mut self, x: &[u64], rng: &mut R) -> Result<(PreparedQuery, Vec<Message>)> {
        let seed = self.seed.as_ref().ok_or_else(|| Error::protocol(EntityId::Du, "no model seed yet"))?;
        let query = prepare_query(x, seed, &self.params, seed.gamma(), rng)?;
        let messages = self.adopt(&query)?;
        Ok((query, messages))
    }

    /// Upload messages for shares prepared earlier, e.g. loaded from disk.
    pub fn adopt(&mut self, query: &PreparedQuery) -> Result<Vec<Message>> {
        let s = query.session;
        if self.outstanding.contains(&s) || self.results.contains_key(&s) {
            return Err(Error::Replay { entity: EntityId::Du, reason: format!("session {s} already submitted") });
        }
        let du = EntityId::Du;
        let messages = vec![
            Message::new(s, du, EntityId::Cs1, MessageKind::QueryShares, query.cs1.encode()),
            Message::new(s, du, EntityId::Cs2, MessageKind::QueryShares, query.cs2.encode()),
            Message::new(
                s,
                du,
                EntityId::Kgc,
                MessageKind::UnitShares,
                Payload::UnitShares { ring: self.params.ring, shares: query.units }.encode(&self.group),
            ),
        ];
        self.outstanding.insert(s);
        Ok(messages)
    }

    pub fn result(&self, session: SessionId) -> Option<&[u8]> {
        self.results.get(&session).map(Vec::as_slice)
    }
}

impl Actor for DataUser {
    fn id(&self) -> EntityId {
        EntityId::Du
    }

    fn handle(&mut self, msg: &Message, _out: &mut Outbox) -> Result<()> {
        let me = EntityId::Du;
        match msg.kind {
            MessageKind::SeedCt => {
                expect_from(me, msg, &[EntityId::Kgc])?;
                self.seed = Some(open_seed(&msg.payload, &self.sk3)?);
            }
            MessageKind::LeafLabel => {
                expect_from(me, msg, &[EntityId::Cs1, EntityId::Cs2])?;
                if !self.outstanding.remove(&msg.session) {
                    return Err(Error::Replay { entity: me, reason: format!("label for {} not awaited", msg.session) });
                }
                self.results.insert(msg.session, decrypt_result(&msg.payload, &self.sk3)?);
            }
            other => return Err(Error::protocol(me, format!("unexpected {other}"))),
        }
        Ok(())
    }
}

/// Deterministic per-entity randomness derived from one master seed.
pub fn entity_rng(master: u64, entity: EntityId) -> ChaCha20Rng {
    use rand::SeedableRng;
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"onepath/rng/v1");
    h.update(master.to_be_bytes());
    h.update([entity.tag()]);
    ChaCha20Rng::from_seed(h.finalize().into())
}
