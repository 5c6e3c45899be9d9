//! User-side query preparation: one upload, then offline until the label arrives.

use rand::{CryptoRng, RngCore};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::model_prep::unpad_label;
use crate::params::ProtocolParams;
use crate::primitives::{prf_eval, PrfSeed, SymmetricKey};
use crate::protocol::SessionId;
use crate::sharing::{Party, ShareVector, UnitShares};

/// Shares for both servers and the key center, bound to one session.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedQuery {
    pub session: SessionId,
    pub cs1: ShareVector,
    pub cs2: ShareVector,
    pub units: UnitShares,
}

impl PreparedQuery {
    pub fn for_party(&self, party: Party) -> &ShareVector {
        match party {
            Party::First => &self.cs1,
            Party::Second => &self.cs2,
        }
    }
}

impl PreparedQuery {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(b"OP1U").bytes(&self.session.0);
        w.var_bytes(&self.cs1.encode()).var_bytes(&self.cs2.encode());
        w.u8(self.cs1.ring.bits() as u8).u32(self.units.first as u32).u32(self.units.second as u32);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(b"OP1U")?;
        let session = SessionId(r.array()?);
        let cs1 = ShareVector::decode(r.var_bytes()?)?;
        let cs2 = ShareVector::decode(r.var_bytes()?)?;
        let bits = r.u8()? as u32;
        let units = UnitShares { first: r.u32()? as u64, second: r.u32()? as u64 };
        r.finish()?;
        if cs1.party != Party::First || cs2.party != Party::Second {
            return Err(Error::format("share vectors in the wrong slots"));
        }
        if cs1.ring != cs2.ring || cs1.ring.bits() != bits || units.first > cs1.ring.mask() || units.second > cs1.ring.mask() {
            return Err(Error::format("query shares use inconsistent rings"));
        }
        if cs1.n() != cs2.n() || cs1.gamma() != cs2.gamma() {
            return Err(Error::format("query share vectors differ in shape"));
        }
        Ok(PreparedQuery { session, cs1, cs2, units })
    }
}

/// Recovers the provider's PRF seed relayed by the key center.
pub fn open_seed(seed_ct: &[u8], sk3: &SymmetricKey) -> Result<PrfSeed> {
    PrfSeed::decode(&sk3.decrypt(seed_ct)?)
}

/// Splits `x` and 1, and precomputes `<x_j>^p = -F(seed, j)^T <x>^p` for every
/// shuffled index `j` in `[1, γ]`.
pub fn prepare_query<R: RngCore + CryptoRng>(
    x: &[u64],
    seed: &PrfSeed,
    params: &ProtocolParams,
    gamma: u32,
    rng: &mut R,
) -> Result<PreparedQuery> {
    if seed.gamma() != gamma {
        return Err(Error::SeedLengthMismatch { expected: gamma, actual: seed.gamma() });
    }
    if x.is_empty() {
        return Err(Error::ShapeMismatch("empty feature vector".into()));
    }
    if let Some(&value) = x.iter().find(|&&v| v >= params.feature_domain()) {
        return Err(Error::FeatureOutOfRange { value, bits: params.feature_bits });
    }
    let ring = params.ring;
    let second: Vec<u64> = x.iter().map(|_| ring.random(rng)).collect();
    let first: Vec<u64> = x.iter().zip(&second).map(|(&v, &r)| ring.sub(v, r)).collect();
    let unit_second = ring.random(rng);
    let units = UnitShares { first: ring.sub(1, unit_second), second: unit_second };

    let mut offsets1 = Vec::with_capacity(gamma as usize);
    let mut offsets2 = Vec::with_capacity(gamma as usize);
    for j in 1..=gamma {
        let mask = prf_eval(seed, j, x.len(), ring.bits())?;
        offsets1.push(ring.neg(ring.dot(&mask, &first)?));
        offsets2.push(ring.neg(ring.dot(&mask, &second)?));
    }
    Ok(PreparedQuery {
        session: SessionId::random(rng),
        cs1: ShareVector { party: Party::First, ring, features: first, offsets: offsets1 },
        cs2: ShareVector { party: Party::Second, ring, features: second, offsets: offsets2 },
        units,
    })
}

/// Opens the returned label ciphertext.
pub fn decrypt_result(label_ct: &[u8], sk3: &SymmetricKey) -> Result<Vec<u8>> {
    unpad_label(&sk3.decrypt(label_ct)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_prep::pad_label;
    use crate::primitives::KeyRole;
    use crate::sharing::{reconstruct, Share};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rec(params: &ProtocolParams, a: u64, b: u64) -> u64 {
        reconstruct(
            &params.ring,
            Share { value: a, party: Party::First },
            Share { value: b, party: Party::Second },
        )
        .unwrap()
    }

    #[test]
    fn single_feature_single_node() {
        let params = ProtocolParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let seed = PrfSeed::sample(1, &mut rng);
        let q = prepare_query(&[5], &seed, &params, 1, &mut rng).unwrap();
        assert_eq!(rec(&params, q.cs1.features[0], q.cs2.features[0]), 5);
        let f = prf_eval(&seed, 1, 1, 16).unwrap()[0];
        let expected = params.ring.neg(params.ring.mul(f, 5));
        assert_eq!(rec(&params, q.cs1.offsets[0], q.cs2.offsets[0]), expected);
        assert_eq!(params.ring.add(q.units.first, q.units.second), 1);
    }

    #[test]
    fn zero_input_gives_zero_offsets() {
        let params = ProtocolParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let seed = PrfSeed::sample(15, &mut rng);
        let q = prepare_query(&[0; 6], &seed, &params, 15, &mut rng).unwrap();
        for j in 0..15 {
            assert_eq!(rec(&params, q.cs1.offsets[j], q.cs2.offsets[j]), 0);
        }
    }

    #[test]
    fn offsets_cancel_masks_against_integer_oracle() {
        let params = ProtocolParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..20 {
            let n = rng.gen_range(1..20);
            let gamma = rng.gen_range(1..64);
            let seed = PrfSeed::sample(gamma, &mut rng);
            let x: Vec<u64> = (0..n).map(|_| rng.gen_range(0..128)).collect();
            let q = prepare_query(&x, &seed, &params, gamma, &mut rng).unwrap();
            for j in 1..=gamma {
                let f = prf_eval(&seed, j, n, 16).unwrap();
                let fx: u128 = f.iter().zip(&x).map(|(&a, &b)| a as u128 * b as u128).sum();
                let off = rec(&params, q.cs1.offsets[j as usize - 1], q.cs2.offsets[j as usize - 1]) as u128;
                assert_eq!((off + fx) % (1 << 16), 0);
            }
        }
    }

    #[test]
    fn input_errors() {
        let params = ProtocolParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let seed = PrfSeed::sample(3, &mut rng);
        assert!(matches!(
            prepare_query(&[1], &seed, &params, 7, &mut rng),
            Err(Error::SeedLengthMismatch { expected: 7, actual: 3 })
        ));
        assert!(matches!(
            prepare_query(&[128], &seed, &params, 3, &mut rng),
            Err(Error::FeatureOutOfRange { value: 128, bits: 7 })
        ));
    }

    #[test]
    fn label_round_trip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let sk3 = SymmetricKey::generate(KeyRole::Sk3, &mut rng);
        let mut ct = sk3.encrypt(&pad_label(b"benign", 9), &mut rng);
        assert_eq!(decrypt_result(&ct, &sk3).unwrap(), b"benign");
        ct[14] ^= 0x80;
        assert!(matches!(decrypt_result(&ct, &sk3), Err(Error::Authentication)));
    }
}
