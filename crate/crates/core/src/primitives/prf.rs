//! Keyed pseudorandom function producing ring vectors, indexed by shuffled node index.

use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use crate::error::{Error, Result};

type HmacSha256 = Hmac<Sha256>;

const DOMAIN: &[u8] = b"onepath/prf/v1";

/// PRF seed sized for a tree with `gamma` internal nodes (gamma bits, rounded up to bytes).
#[derive(Clone, PartialEq, Eq)]
pub struct PrfSeed {
    bytes: Vec<u8>,
    gamma: u32,
}

impl std::fmt::Debug for PrfSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrfSeed").field("gamma", &self.gamma).finish_non_exhaustive()
    }
}

impl PrfSeed {
    pub fn byte_len(gamma: u32) -> usize {
        (gamma as usize).div_ceil(8)
    }

    pub fn sample<R: RngCore + CryptoRng>(gamma: u32, rng: &mut R) -> PrfSeed {
        let mut bytes = vec![0u8; Self::byte_len(gamma)];
        rng.fill_bytes(&mut bytes);
        PrfSeed { bytes, gamma }
    }

    pub fn from_bytes(bytes: Vec<u8>, gamma: u32) -> Result<PrfSeed> {
        if gamma == 0 || bytes.len() != Self::byte_len(gamma) {
            return Err(Error::SeedLengthMismatch { expected: gamma, actual: (bytes.len() * 8) as u32 });
        }
        Ok(PrfSeed { bytes, gamma })
    }

    pub fn gamma(&self) -> u32 {
        self.gamma
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Serialized form: gamma (u32 BE) followed by the seed bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.gamma.to_be_bytes().to_vec();
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PrfSeed> {
        if bytes.len() < 4 {
            return Err(Error::format("seed encoding too short"));
        }
        let gamma = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        PrfSeed::from_bytes(bytes[4..].to_vec(), gamma)
    }
}

/// F(seed, node_index) as `n` elements of Z_{2^ring_bits}.
///
/// HMAC-SHA256 in counter mode over (node_index, block counter); each entry consumes
/// four output bytes reduced mod 2^ring_bits, so entries are exactly uniform for
/// ring_bits <= 32.
pub fn prf_eval(seed: &PrfSeed, node_index: u32, n: usize, ring_bits: u32) -> Result<Vec<u64>> {
    if node_index == 0 || node_index > seed.gamma {
        return Err(Error::NodeIndexOutOfRange { index: node_index, gamma: seed.gamma });
    }
    debug_assert!((1..=32).contains(&ring_bits));
    let mask = if ring_bits == 64 { u64::MAX } else { (1u64 << ring_bits) - 1 };
    let mut out = Vec::with_capacity(n);
    let keyed = HmacSha256::new_from_slice(&seed.bytes).expect("hmac accepts any key length");
    let mut counter = 0u32;
    while out.len() < n {
        let mut mac = keyed.clone();
        mac.update(DOMAIN);
        mac.update(&node_index.to_be_bytes());
        mac.update(&counter.to_be_bytes());
        let block = mac.finalize().into_bytes();
        for chunk in block.chunks_exact(4) {
            if out.len() == n {
                break;
            }
            let word = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            out.push(word as u64 & mask);
        }
        counter += 1;
    }
    Ok(out)
}
