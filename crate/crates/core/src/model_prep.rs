//! Provider-side model preparation: shuffled node indexes, layered index
//! encryption, PRF-masked feature selectors, FE-encrypted linear coefficients
//! and sk3-encrypted labels.

use rand::{CryptoRng, Rng, RngCore};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::ipfe::{ipfe_encrypt, IpfeCiphertext, IpfePublicKey};
use crate::params::ProtocolParams;
use crate::primitives::ske::{encode_index, KeyRole};
use crate::primitives::{prf_eval, Group, PrfSeed, SymmetricKey};
use crate::tree::CompleteTree;

const TREE_MAGIC: &[u8; 4] = b"OP1T";
const ROOT_MAGIC: &[u8; 4] = b"OP1R";
const FORMAT_VERSION: u8 = 1;

/// Permutation of `[1, γ]`: position `p` (level order) gets index `indexes[p - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffledIndexMap {
    indexes: Vec<u32>,
    positions: Vec<u32>,
}

impl ShuffledIndexMap {
    pub fn from_indexes(indexes: Vec<u32>) -> Result<Self> {
        let gamma = indexes.len();
        let mut positions = vec![0u32; gamma];
        for (p, &d) in indexes.iter().enumerate() {
            let slot = (d as usize)
                .checked_sub(1)
                .and_then(|i| positions.get_mut(i))
                .ok_or_else(|| Error::ShapeMismatch(format!("index {d} outside [1, {gamma}]")))?;
            if *slot != 0 {
                return Err(Error::ShapeMismatch(format!("index {d} assigned twice")));
            }
            *slot = p as u32 + 1;
        }
        Ok(ShuffledIndexMap { indexes, positions })
    }

    pub fn gamma(&self) -> u32 {
        self.indexes.len() as u32
    }

    pub fn index_of(&self, position: usize) -> u32 {
        self.indexes[position - 1]
    }

    pub fn position_of(&self, index: u32) -> usize {
        self.positions[index as usize - 1] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.indexes
    }
}

/// Fisher-Yates over `[1, γ]`, swapping from the end toward the front.
pub fn fisher_yates<R: Rng + ?Sized>(gamma: u32, rng: &mut R) -> ShuffledIndexMap {
    let mut a: Vec<u32> = (1..=gamma).collect();
    for i in (1..a.len()).rev() {
        let j = rng.gen_range(0..=i);
        a.swap(i, j);
    }
    ShuffledIndexMap::from_indexes(a).expect("a shuffle is a permutation")
}

/// Integer line through the threshold: `R(X) = A + B X = 1 + 2b(X - Θ)`,
/// so `R > 1` exactly when `X > Θ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearCode {
    pub slope: u64,
    pub a: i64,
    pub b: i64,
}

impl LinearCode {
    pub fn with_slope(threshold: u64, slope: u64) -> Self {
        let b = 2 * slope as i64;
        LinearCode { slope, a: 1 - b * threshold as i64, b }
    }

    pub fn eval(&self, x: u64) -> i64 {
        self.a + self.b * x as i64
    }
}

pub fn encode_linear<R: Rng + ?Sized>(threshold: u64, params: &ProtocolParams, rng: &mut R) -> LinearCode {
    LinearCode::with_slope(threshold, rng.gen_range(1..=params.slope_max))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncInternalNode {
    /// 1-based layer in the full tree.
    pub layer: u32,
    /// e_f + F(seed, d) mod 2^l.
    pub masked_feature: Vec<u64>,
    pub coefficients: IpfeCiphertext,
    /// One or two SKE layers around the 4-byte index.
    pub index_ct: Vec<u8>,
}

impl EncInternalNode {
    fn write(&self, group: &Group, params: &ProtocolParams, w: &mut Writer) {
        w.u32(self.layer);
        let width = params.ring.width();
        for &v in &self.masked_feature {
            w.uint(v, width);
        }
        self.coefficients.write(group, w);
        w.var_bytes(&self.index_ct);
    }

    fn read(group: &Group, params: &ProtocolParams, n: usize, r: &mut Reader<'_>) -> Result<Self> {
        let layer = r.u32()?;
        let width = params.ring.width();
        let masked_feature = (0..n)
            .map(|_| {
                let v = r.uint(width)?;
                if v > params.ring.mask() {
                    return Err(Error::format("masked selector entry exceeds ring"));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        let coefficients = IpfeCiphertext::read(group, r)?;
        let index_ct = r.var_bytes()?.to_vec();
        Ok(EncInternalNode { layer, masked_feature, coefficients, index_ct })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncLeaf {
    pub label_ct: Vec<u8>,
}

/// Level-order encrypted (sub)tree. A subtree keeps the layer numbers of the
/// full tree; `root_layer` is the layer of its root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedTree {
    pub params: ProtocolParams,
    pub n: usize,
    pub depth: u32,
    pub root_layer: u32,
    pub nodes: Vec<EncInternalNode>,
    pub leaves: Vec<EncLeaf>,
}

/// Which child of a node the traversal takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    pub fn from_right(right: bool) -> Self {
        if right {
            Branch::Right
        } else {
            Branch::Left
        }
    }

    fn offset(self) -> usize {
        match self {
            Branch::Left => 0,
            Branch::Right => 1,
        }
    }
}

/// Result of descending one level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Child {
    Subtree(EncryptedTree),
    Leaf(EncLeaf),
}

impl EncryptedTree {
    pub fn gamma(&self) -> usize {
        self.nodes.len()
    }

    /// Internal plus leaf records.
    pub fn record_count(&self) -> usize {
        self.nodes.len() + self.leaves.len()
    }

    pub fn root(&self) -> &EncInternalNode {
        &self.nodes[0]
    }

    fn check_shape(&self) -> Result<()> {
        let gamma = 1usize
            .checked_shl(self.depth)
            .filter(|_| self.depth >= 1 && self.depth <= crate::tree::MAX_DEPTH)
            .ok_or_else(|| Error::ShapeMismatch(format!("encrypted tree depth {}", self.depth)))?
            - 1;
        if self.nodes.len() != gamma || self.leaves.len() != gamma + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} internal and {} leaf records for depth {}",
                self.nodes.len(),
                self.leaves.len(),
                self.depth
            )));
        }
        if self.root_layer == 0 {
            return Err(Error::ShapeMismatch("root layer 0".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let expected = self.root_layer + CompleteTree::layer_of(i + 1) - 1;
            if node.layer != expected || node.masked_feature.len() != self.n {
                return Err(Error::ShapeMismatch(format!("record {} malformed", i + 1)));
            }
        }
        Ok(())
    }

    /// The child of the root on `branch`: a subtree, or a leaf at the bottom layer.
    pub fn child(&self, branch: Branch) -> Child {
        let c = 2 + branch.offset();
        if self.depth == 1 {
            return Child::Leaf(self.leaves[c - 2].clone());
        }
        let depth = self.depth - 1;
        let mut nodes = Vec::with_capacity((1 << depth) - 1);
        for level in 0..depth {
            let start = c << level;
            nodes.extend_from_slice(&self.nodes[start - 1..start - 1 + (1 << level)]);
        }
        let first_leaf = (c << depth) - (1 << self.depth);
        let leaves = self.leaves[first_leaf..first_leaf + (1 << depth)].to_vec();
        Child::Subtree(EncryptedTree {
            params: self.params,
            n: self.n,
            depth,
            root_layer: self.root_layer + 1,
            nodes,
            leaves,
        })
    }

    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(group, &mut w);
        w.finish()
    }

    /// Header: magic, version, security bits, d, root layer, n, l, t, A_max, B_max, slope bound.
    pub fn write(&self, group: &Group, w: &mut Writer) {
        w.bytes(TREE_MAGIC)
            .u8(FORMAT_VERSION)
            .u32(group.params().security_bits)
            .u32(self.depth)
            .u32(self.root_layer)
            .u32(self.n as u32);
        self.params.encode(w);
        w.u64(self.params.a_max()).u64(self.params.b_max());
        for node in &self.nodes {
            node.write(group, &self.params, w);
        }
        for leaf in &self.leaves {
            w.var_bytes(&leaf.label_ct);
        }
    }

    pub fn decode(group: &Group, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let tree = Self::read(group, &mut r)?;
        r.finish()?;
        Ok(tree)
    }

    pub fn read(group: &Group, r: &mut Reader<'_>) -> Result<Self> {
        r.magic(TREE_MAGIC)?;
        if r.u8()? != FORMAT_VERSION {
            return Err(Error::format("unsupported encrypted tree version"));
        }
        if r.u32()? != group.params().security_bits {
            return Err(Error::format("encrypted tree was built for another group"));
        }
        let depth = r.u32()?;
        let root_layer = r.u32()?;
        let n = r.u32()? as usize;
        let params = ProtocolParams::read(r)?;
        if r.u64()? != params.a_max() || r.u64()? != params.b_max() {
            return Err(Error::format("coefficient bounds disagree with (l, t, slope)"));
        }
        if depth == 0 || depth > crate::tree::MAX_DEPTH || n == 0 {
            return Err(Error::format(format!("encrypted tree shape d = {depth}, n = {n}")));
        }
        let gamma = (1usize << depth) - 1;
        let min_record = 4 + n * params.ring.width() + IpfeCiphertext::encoded_len(group) + 4;
        if r.remaining() < gamma.saturating_mul(min_record) {
            return Err(Error::format("encrypted tree truncated"));
        }
        let nodes = (0..gamma)
            .map(|_| EncInternalNode::read(group, &params, n, r))
            .collect::<Result<Vec<_>>>()?;
        let leaves = (0..=gamma)
            .map(|_| Ok(EncLeaf { label_ct: r.var_bytes()?.to_vec() }))
            .collect::<Result<Vec<_>>>()?;
        let tree = EncryptedTree { params, n, depth, root_layer, nodes, leaves };
        tree.check_shape()?;
        Ok(tree)
    }
}

/// What the second server stores before any query: the root record alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootPayload {
    pub params: ProtocolParams,
    pub n: usize,
    pub depth: u32,
    pub root: EncInternalNode,
}

impl RootPayload {
    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(ROOT_MAGIC)
            .u8(FORMAT_VERSION)
            .u32(group.params().security_bits)
            .u32(self.depth)
            .u32(self.n as u32);
        self.params.encode(&mut w);
        self.root.write(group, &self.params, &mut w);
        w.finish()
    }

    pub fn decode(group: &Group, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(ROOT_MAGIC)?;
        if r.u8()? != FORMAT_VERSION {
            return Err(Error::format("unsupported root payload version"));
        }
        if r.u32()? != group.params().security_bits {
            return Err(Error::format("root payload was built for another group"));
        }
        let depth = r.u32()?;
        let n = r.u32()? as usize;
        let params = ProtocolParams::read(&mut r)?;
        let root = EncInternalNode::read(group, &params, n, &mut r)?;
        r.finish()?;
        if root.layer != 1 || depth == 0 {
            return Err(Error::format("root payload is not a root"));
        }
        Ok(RootPayload { params, n, depth, root })
    }
}

/// The three symmetric keys the provider receives from the key center.
#[derive(Clone, Debug)]
pub struct ProviderKeys {
    pub sk1: SymmetricKey,
    pub sk2: SymmetricKey,
    pub sk3: SymmetricKey,
}

impl ProviderKeys {
    pub fn check_roles(&self) -> Result<()> {
        if self.sk1.role() != KeyRole::Sk1 || self.sk2.role() != KeyRole::Sk2 || self.sk3.role() != KeyRole::Sk3 {
            return Err(Error::ShapeMismatch("symmetric keys are not (sk1, sk2, sk3)".into()));
        }
        Ok(())
    }
}

/// Plaintext labels are length-prefixed and zero-padded to a common width so
/// label ciphertexts all have one size.
pub fn pad_label(label: &[u8], width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + width);
    out.extend_from_slice(&(label.len() as u16).to_be_bytes());
    out.extend_from_slice(label);
    out.resize(2 + width, 0);
    out
}

pub fn unpad_label(padded: &[u8]) -> Result<Vec<u8>> {
    let len = padded
        .get(..2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as usize)
        .ok_or_else(|| Error::format("label plaintext too short"))?;
    let body = padded.get(2..2 + len).ok_or_else(|| Error::format("label length exceeds plaintext"))?;
    if padded[2 + len..].iter().any(|&b| b != 0) {
        return Err(Error::format("label padding is not zero"));
    }
    Ok(body.to_vec())
}

/// Everything preparation produces. Only `cs1_tree`, `cs2_root` and `seed_ct`
/// leave the provider; the rest is what it retains.
#[derive(Clone, Debug)]
pub struct PreparedModel {
    pub cs1_tree: EncryptedTree,
    pub cs2_root: RootPayload,
    pub seed_ct: Vec<u8>,
    pub index_map: ShuffledIndexMap,
    /// Per level-order position.
    pub coefficients: Vec<LinearCode>,
}

impl PreparedModel {
    /// Provider state file: everything preparation produced, including the
    /// retained index map and coefficients.
    pub fn encode(&self, group: &Group) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(b"OP1V").u8(1);
        w.var_bytes(&self.cs1_tree.encode(group));
        w.var_bytes(&self.cs2_root.encode(group));
        w.var_bytes(&self.seed_ct);
        w.u32(self.index_map.gamma());
        for &d in self.index_map.as_slice() {
            w.u32(d);
        }
        for code in &self.coefficients {
            w.u64(code.slope).i64(code.a).i64(code.b);
        }
        w.finish()
    }

    pub fn decode(group: &Group, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"OP1V")?;
        let version = r.u8()?;
        if version != 1 {
            return Err(Error::format(format!("provider state version {version}")));
        }
        let cs1_tree = EncryptedTree::decode(group, r.var_bytes()?)?;
        let cs2_root = RootPayload::decode(group, r.var_bytes()?)?;
        let seed_ct = r.var_bytes()?.to_vec();
        let gamma = r.u32()?;
        if gamma as usize != cs1_tree.gamma() {
            return Err(Error::format("index map does not match the tree"));
        }
        let index_map = ShuffledIndexMap::from_indexes((0..gamma).map(|_| r.u32()).collect::<Result<_>>()?)?;
        let coefficients = (0..gamma)
            .map(|_| Ok(LinearCode { slope: r.u64()?, a: r.i64()?, b: r.i64()? }))
            .collect::<Result<_>>()?;
        r.finish()?;
        Ok(PreparedModel { cs1_tree, cs2_root, seed_ct, index_map, coefficients })
    }
}

pub fn prepare_model<R: RngCore + CryptoRng>(
    tree: &CompleteTree,
    keys: &ProviderKeys,
    mpk: &IpfePublicKey,
    seed: &PrfSeed,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<PreparedModel> {
    keys.check_roles()?;
    params.check()?;
    let gamma = tree.gamma();
    if seed.gamma() != gamma {
        return Err(Error::SeedLengthMismatch { expected: gamma, actual: seed.gamma() });
    }
    if tree.feature_bits() != params.feature_bits {
        return Err(Error::ShapeMismatch(format!(
            "tree quantized to {} bits, parameters say {}",
            tree.feature_bits(),
            params.feature_bits
        )));
    }
    if mpk.bounds() != [params.a_max(), params.b_max()] {
        return Err(Error::ShapeMismatch("public key bounds differ from the protocol bounds".into()));
    }
    let ring = params.ring;
    let n = tree.n();

    // Step 1: labels under sk3.
    let width = tree.leaves().iter().map(String::len).max().unwrap_or(0);
    let leaves = tree
        .leaves()
        .iter()
        .map(|l| EncLeaf { label_ct: keys.sk3.encrypt(&pad_label(l.as_bytes(), width), rng) })
        .collect();

    // Step 2: shuffled indexes assigned in level order.
    let index_map = fisher_yates(gamma, rng);

    let mut nodes = Vec::with_capacity(gamma as usize);
    let mut coefficients = Vec::with_capacity(gamma as usize);
    let mut root_for_cs2 = None;
    for position in 1..=gamma as usize {
        let node = tree.node(position);
        let layer = CompleteTree::layer_of(position);
        let d = index_map.index_of(position);

        // Step 3: layered index encryption.
        let plain = encode_index(d);
        let index_ct = if position == 1 {
            root_for_cs2 = Some(keys.sk2.encrypt(&plain, rng));
            keys.sk1.encrypt(&plain, rng)
        } else if layer % 2 == 1 {
            keys.sk2.encrypt(&keys.sk1.encrypt(&plain, rng), rng)
        } else {
            keys.sk1.encrypt(&keys.sk2.encrypt(&plain, rng), rng)
        };

        // Step 5: masked selector and encrypted line.
        let mask = prf_eval(seed, d, n, ring.bits())?;
        let mut masked_feature = mask;
        let f = node.feature as usize - 1;
        masked_feature[f] = ring.add(masked_feature[f], 1);
        let code = encode_linear(node.threshold, params, rng);
        let coefficients_ct = ipfe_encrypt(mpk, [code.a, code.b], rng)?;
        coefficients.push(code);
        nodes.push(EncInternalNode { layer, masked_feature, coefficients: coefficients_ct, index_ct });
    }

    // Step 4: the seed travels to the user under sk3.
    let seed_ct = keys.sk3.encrypt(&seed.encode(), rng);

    let root = nodes[0].clone();
    let cs2_root = RootPayload {
        params: *params,
        n,
        depth: tree.depth(),
        root: EncInternalNode { index_ct: root_for_cs2.expect("gamma >= 1"), ..root },
    };
    let cs1_tree = EncryptedTree { params: *params, n, depth: tree.depth(), root_layer: 1, nodes, leaves };
    Ok(PreparedModel { cs1_tree, cs2_root, seed_ct, index_map, coefficients })
}
