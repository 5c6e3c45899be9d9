//! Two-party additive secret sharing over Z_{2^l}.

use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const MIN_RING_BITS: u32 = 8;
pub const MAX_RING_BITS: u32 = 32;

/// Share ring Z_{2^l}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingParams {
    bits: u32,
}

impl RingParams {
    pub fn new(bits: u32) -> Result<Self> {
        if !(MIN_RING_BITS..=MAX_RING_BITS).contains(&bits) {
            return Err(Error::Infeasible(format!(
                "ring width l = {bits} outside [{MIN_RING_BITS}, {MAX_RING_BITS}]"
            )));
        }
        Ok(RingParams { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn modulus(&self) -> u64 {
        1u64 << self.bits
    }

    pub fn mask(&self) -> u64 {
        self.modulus() - 1
    }

    /// 2^(l-1): values at or above decode as negative.
    pub fn half(&self) -> u64 {
        1u64 << (self.bits - 1)
    }

    /// Bytes per packed ring element.
    pub fn width(&self) -> usize {
        (self.bits as usize).div_ceil(8)
    }

    pub fn reduce(&self, v: u64) -> u64 {
        v & self.mask()
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_add(b))
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_sub(b))
    }

    pub fn neg(&self, a: u64) -> u64 {
        self.reduce(a.wrapping_neg())
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce(a.wrapping_mul(b))
    }

    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> u64 {
        rng.gen::<u64>() & self.mask()
    }

    /// Maps a signed integer to its representative in [0, 2^l).
    pub fn signed_encode(&self, v: i64) -> u64 {
        self.reduce(v as u64)
    }

    /// Inverse of [`signed_encode`](Self::signed_encode) on (-2^(l-1), 2^(l-1)].
    pub fn signed_decode(&self, v: u64) -> i64 {
        let v = self.reduce(v);
        if v < self.half() {
            v as i64
        } else {
            v as i64 - self.modulus() as i64
        }
    }

    /// Inner product mod 2^l.
    pub fn dot(&self, a: &[u64], b: &[u64]) -> Result<u64> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
        }
        Ok(self.reduce(a.iter().zip(b).fold(0u64, |acc, (x, y)| acc.wrapping_add(x.wrapping_mul(*y)))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    First,
    Second,
}

impl Party {
    pub fn tag(self) -> u8 {
        match self {
            Party::First => 1,
            Party::Second => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Party::First),
            2 => Ok(Party::Second),
            other => Err(Error::format(format!("party tag {other}"))),
        }
    }

    pub fn other(self) -> Party {
        match self {
            Party::First => Party::Second,
            Party::Second => Party::First,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Share {
    pub value: u64,
    pub party: Party,
}

/// Splits `value` as `(value - r, r)` with `r` uniform in Z_{2^l}.
pub fn split<R: RngCore + CryptoRng + ?Sized>(ring: &RingParams, value: u64, rng: &mut R) -> (Share, Share) {
    let r = ring.random(rng);
    split_with(ring, value, r)
}

pub(crate) fn split_with(ring: &RingParams, value: u64, r: u64) -> (Share, Share) {
    (
        Share { value: ring.sub(value, r), party: Party::First },
        Share { value: ring.reduce(r), party: Party::Second },
    )
}

pub fn reconstruct(ring: &RingParams, a: Share, b: Share) -> Result<u64> {
    if a.party == b.party {
        return Err(Error::PartyMismatch);
    }
    Ok(ring.add(a.value, b.value))
}

pub fn signed_decode(ring: &RingParams, value: u64) -> i64 {
    ring.signed_decode(value)
}

pub fn dot_mod(ring: &RingParams, vec: &[u64], shares: &[u64]) -> Result<u64> {
    ring.dot(vec, shares)
}

const SHARE_FILE_MAGIC: &[u8; 4] = b"OP1S";

/// One server's view of a query: shares of the feature vector and of the
/// per-node offsets that cancel the provider's PRF masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    pub party: Party,
    pub ring: RingParams,
    /// Shares of x, n entries.
    pub features: Vec<u64>,
    /// Offset shares indexed by shuffled node index minus one, gamma entries.
    pub offsets: Vec<u64>,
}

impl ShareVector {
    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn gamma(&self) -> usize {
        self.offsets.len()
    }

    /// Share file: "OP1S", l, n, gamma, party tag, then packed little-endian entries.
    pub fn encode(&self) -> Vec<u8> {
        let width = self.ring.width();
        let mut w = Writer::with_capacity(14 + width * (self.n() + self.gamma()));
        w.bytes(SHARE_FILE_MAGIC)
            .u8(self.ring.bits() as u8)
            .u32(self.n() as u32)
            .u32(self.gamma() as u32)
            .u8(self.party.tag());
        for &v in self.features.iter().chain(&self.offsets) {
            w.bytes(&v.to_le_bytes()[..width]);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let out = Self::read(&mut r)?;
        r.finish()?;
        Ok(out)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.magic(SHARE_FILE_MAGIC)?;
        let ring = RingParams::new(r.u8()? as u32)?;
        let n = r.u32()? as usize;
        let gamma = r.u32()? as usize;
        let party = Party::from_tag(r.u8()?)?;
        let width = ring.width();
        if r.remaining() < (n + gamma) * width {
            return Err(Error::format("share file truncated"));
        }
        let mut read_entry = || -> Result<u64> {
            let mut le = [0u8; 8];
            le[..width].copy_from_slice(r.take(width)?);
            let v = u64::from_le_bytes(le);
            if v > ring.mask() {
                return Err(Error::format("share entry exceeds ring"));
            }
            Ok(v)
        };
        let features = (0..n).map(|_| read_entry()).collect::<Result<Vec<_>>>()?;
        let offsets = (0..gamma).map(|_| read_entry()).collect::<Result<Vec<_>>>()?;
        Ok(ShareVector { party, ring, features, offsets })
    }
}

/// Both shares of the constant 1, held by the key generation center.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitShares {
    pub first: u64,
    pub second: u64,
}

impl UnitShares {
    pub fn for_party(&self, party: Party) -> u64 {
        match party {
            Party::First => self.first,
            Party::Second => self.second,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn ring(bits: u32) -> RingParams {
        RingParams::new(bits).unwrap()
    }

    #[test]
    fn ring_bounds() {
        assert!(RingParams::new(7).is_err());
        assert!(RingParams::new(33).is_err());
        assert!(RingParams::new(64).is_err());
        assert_eq!(ring(16).modulus(), 65536);
    }

    #[test]
    fn split_zero_and_fixed_randomness() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let r = ring(16);
        let (a, b) = split(&r, 0, &mut rng);
        assert_eq!(reconstruct(&r, a, b).unwrap(), 0);

        // l = 4, value 10, r = 3: shares (7, 3). Ring widths below 8 are not valid
        // protocol parameters, so the arithmetic is checked directly.
        let modulus = 1u64 << 4;
        let (s1, s2) = ((10 + modulus - 3) % modulus, 3);
        assert_eq!((s1, s2), (7, 3));
        assert_eq!((s1 + s2) % modulus, 10);
    }

    #[test]
    fn reconstruct_wraps_and_checks_parties() {
        let r = ring(8);
        let a = Share { value: 255, party: Party::First };
        let b = Share { value: 1, party: Party::Second };
        assert_eq!(reconstruct(&r, a, b).unwrap(), 0);
        assert!(matches!(reconstruct(&r, a, a), Err(Error::PartyMismatch)));
        let (x, y) = split_with(&r, 10, 3);
        assert_eq!((x.value, y.value), (7, 3));
    }

    #[test]
    fn exhaustive_small_ring() {
        let r = ring(12);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for v in 0..r.modulus() {
            let (a, b) = split(&r, v, &mut rng);
            assert_eq!(reconstruct(&r, a, b).unwrap(), v);
        }
    }

    #[test]
    fn second_share_is_uniform() {
        // Chi-square over 256 buckets with 10^4 draws; 255 dof, the 0.999 quantile is ~330.
        let r = ring(8);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut counts = [0u32; 256];
        let draws = 10_000;
        for i in 0..draws {
            let (a, b) = split(&r, (i % 256) as u64, &mut rng);
            assert_eq!(reconstruct(&r, a, b).unwrap(), (i % 256) as u64);
            counts[b.value as usize] += 1;
        }
        let expected = draws as f64 / 256.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 330.0, "chi2 = {chi2}");
    }

    #[test]
    fn signed_decode_edges() {
        let r = ring(16);
        assert_eq!(signed_decode(&r, 0), 0);
        assert_eq!(signed_decode(&r, r.mask()), -1);
        assert_eq!(signed_decode(&r, r.half()), -(r.half() as i64));
        assert_eq!(signed_decode(&r, r.half() - 1), r.half() as i64 - 1);
    }

    #[test]
    fn dot_mod_examples() {
        let r = ring(16);
        assert_eq!(dot_mod(&r, &[0, 0, 0, 0], &[5, 6, 7, 8]).unwrap(), 0);
        assert_eq!(dot_mod(&r, &[0, 0, 1, 0], &[5, 6, 7, 8]).unwrap(), 7);
        assert!(matches!(dot_mod(&r, &[1], &[1, 2]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn share_file_round_trip() {
        let r = ring(16);
        let sv = ShareVector {
            party: Party::Second,
            ring: r,
            features: vec![1, 2, 65535],
            offsets: vec![9, 0, 7, 7, 4, 3, 2],
        };
        let bytes = sv.encode();
        assert_eq!(&bytes[..4], b"OP1S");
        assert_eq!(bytes.len(), 14 + 2 * 10);
        assert_eq!(ShareVector::decode(&bytes).unwrap(), sv);
        assert!(ShareVector::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn reconstruct_inverts_split(bits in 8u32..=32, v in any::<u64>(), seed in any::<u64>()) {
            let r = ring(bits);
            let v = r.reduce(v);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (a, b) = split(&r, v, &mut rng);
            prop_assert_eq!(reconstruct(&r, a, b).unwrap(), v);
        }

        #[test]
        fn reconstruct_is_linear(bits in 8u32..=32, v in any::<u64>(), w in any::<u64>(), seed in any::<u64>()) {
            let r = ring(bits);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (a1, a2) = split(&r, r.reduce(v), &mut rng);
            let (b1, b2) = split(&r, r.reduce(w), &mut rng);
            let s1 = Share { value: r.add(a1.value, b1.value), party: Party::First };
            let s2 = Share { value: r.add(a2.value, b2.value), party: Party::Second };
            prop_assert_eq!(reconstruct(&r, s1, s2).unwrap(), r.add(v, w));
        }

        #[test]
        fn signed_round_trip(bits in 8u32..=32, k in any::<i64>()) {
            let r = ring(bits);
            let half = r.half() as i64;
            let k = k.rem_euclid(2 * half) - half + 1; // (-2^(l-1), 2^(l-1)]
            prop_assume!(k < half);
            prop_assert_eq!(r.signed_decode(r.signed_encode(k)), k);
        }

        #[test]
        fn dot_matches_bigint_oracle(bits in 8u32..=32, a in prop::collection::vec(any::<u32>(), 1..40), seed in any::<u64>()) {
            let r = ring(bits);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a: Vec<u64> = a.into_iter().map(|v| r.reduce(v as u64)).collect();
            let b: Vec<u64> = a.iter().map(|_| r.random(&mut rng)).collect();
            let exact: u128 = a.iter().zip(&b).map(|(x, y)| *x as u128 * *y as u128).sum();
            prop_assert_eq!(r.dot(&a, &b).unwrap() as u128, exact % (1u128 << bits));
        }
    }
}
