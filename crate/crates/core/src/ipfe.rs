//! Two-slot inner-product functional encryption over a DDH group.
//!
//! Ciphertexts `(g^r, g^m1 pk1^r, g^m2 pk2^r)`; a functional key for `y` is
//! `sk_y = y1 s1 + y2 s2 mod q`, and decryption recovers `<m, y>` from
//! `ct1^y1 ct2^y2 / ct0^sk_y = g^<m, y>` with a bounded discrete log.
//! Messages are signed and encoded centered in Z_q.

use std::sync::Arc;

use rand::{CryptoRng, RngCore};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::primitives::{DlogTable, FixedBase, Group, GroupElement, GroupParams, Scalar};

pub const SLOTS: usize = 2;

const MPK_MAGIC: &[u8; 4] = b"OP1P";
const MSK_MAGIC: &[u8; 4] = b"OP1Q";

#[derive(Clone)]
pub struct IpfePublicKey {
    group: Group,
    pk: [GroupElement; SLOTS],
    pk_tables: Arc<[FixedBase; SLOTS]>,
    /// Per-slot bound on |message|.
    bounds: [u64; SLOTS],
}

impl std::fmt::Debug for IpfePublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IpfePublicKey").field("bounds", &self.bounds).finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct IpfeSecretKey {
    group: Group,
    s: [Scalar; SLOTS],
}

impl std::fmt::Debug for IpfeSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("IpfeSecretKey(..)")
    }
}

#[derive(Clone, Debug)]
pub struct IpfeMasterKeys {
    pub mpk: IpfePublicKey,
    pub msk: IpfeSecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IpfeCiphertext {
    pub ct0: GroupElement,
    pub ct: [GroupElement; SLOTS],
}

/// Key for vector `y`; `y` travels with the key so the holder can exponentiate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionalKey {
    pub y: [u64; SLOTS],
    pub sk: Scalar,
}

impl IpfePublicKey {
    fn from_parts(group: Group, pk: [GroupElement; SLOTS], bounds: [u64; SLOTS]) -> Self {
        let pk_tables = Arc::new([FixedBase::new(&group, &pk[0]), FixedBase::new(&group, &pk[1])]);
        IpfePublicKey { group, pk, pk_tables, bounds }
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn bounds(&self) -> [u64; SLOTS] {
        self.bounds
    }

    pub fn pk(&self) -> &[GroupElement; SLOTS] {
        &self.pk
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MPK_MAGIC).u8(1).var_bytes(&self.group.params().encode());
        for b in self.bounds {
            w.u64(b);
        }
        for pk in &self.pk {
            w.bytes(&self.group.encode_element(pk));
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MPK_MAGIC)?;
        if r.u8()? != 1 {
            return Err(Error::format("unsupported public key version"));
        }
        let group = Group::new(GroupParams::decode(r.var_bytes()?)?)?;
        let bounds = [r.u64()?, r.u64()?];
        let len = group.element_len();
        let pk1 = group.decode_element(r.take(len)?)?;
        let pk2 = group.decode_element(r.take(len)?)?;
        r.finish()?;
        if !group.in_subgroup(&pk1) || !group.in_subgroup(&pk2) {
            return Err(Error::format("public key outside the prime-order subgroup"));
        }
        Ok(Self::from_parts(group, [pk1, pk2], bounds))
    }
}

impl IpfeSecretKey {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MSK_MAGIC).u8(1).u32(self.group.params().security_bits);
        for s in &self.s {
            w.var_bytes(&self.group.encode_scalar(s));
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8], group: &Group) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MSK_MAGIC)?;
        if r.u8()? != 1 {
            return Err(Error::format("unsupported secret key version"));
        }
        if r.u32()? != group.params().security_bits {
            return Err(Error::format("secret key was issued for another group"));
        }
        let s1 = group.decode_scalar(r.var_bytes()?)?;
        let s2 = group.decode_scalar(r.var_bytes()?)?;
        r.finish()?;
        Ok(IpfeSecretKey { group: group.clone(), s: [s1, s2] })
    }

    /// Whether `mpk` was generated from this key (pk_i = g^s_i).
    pub fn matches(&self, mpk: &IpfePublicKey) -> bool {
        self.s.iter().zip(&mpk.pk).all(|(s, pk)| self.group.exp_g(s) == *pk)
    }
}

impl IpfeCiphertext {
    pub fn encoded_len(group: &Group) -> usize {
        (SLOTS + 1) * group.element_len()
    }

    pub fn write(&self, group: &Group, w: &mut Writer) {
        w.bytes(&group.encode_element(&self.ct0));
        for c in &self.ct {
            w.bytes(&group.encode_element(c));
        }
    }

    pub fn read(group: &Group, r: &mut Reader<'_>) -> Result<Self> {
        let len = group.element_len();
        let ct0 = group.decode_element(r.take(len)?)?;
        let c1 = group.decode_element(r.take(len)?)?;
        let c2 = group.decode_element(r.take(len)?)?;
        Ok(IpfeCiphertext { ct0, ct: [c1, c2] })
    }
}

impl FunctionalKey {
    pub fn write(&self, group: &Group, w: &mut Writer) {
        w.u64(self.y[0]).u64(self.y[1]).var_bytes(&group.encode_scalar(&self.sk));
    }

    pub fn read(group: &Group, r: &mut Reader<'_>) -> Result<Self> {
        let y = [r.u64()?, r.u64()?];
        let sk = group.decode_scalar(r.var_bytes()?)?;
        Ok(FunctionalKey { y, sk })
    }
}

/// Fresh master keys with per-slot message bounds.
pub fn ipfe_setup<R: RngCore + CryptoRng>(group: &Group, bounds: [u64; SLOTS], rng: &mut R) -> IpfeMasterKeys {
    let s = [group.random_scalar(rng), group.random_scalar(rng)];
    let pk = [group.exp_g(&s[0]), group.exp_g(&s[1])];
    IpfeMasterKeys {
        mpk: IpfePublicKey::from_parts(group.clone(), pk, bounds),
        msk: IpfeSecretKey { group: group.clone(), s },
    }
}

pub fn ipfe_encrypt<R: RngCore + CryptoRng>(
    mpk: &IpfePublicKey,
    message: [i64; SLOTS],
    rng: &mut R,
) -> Result<IpfeCiphertext> {
    for (slot, (&m, &bound)) in message.iter().zip(&mpk.bounds).enumerate() {
        if m.unsigned_abs() > bound {
            return Err(Error::CoefficientOutOfBound { slot, value: m, bound });
        }
    }
    let group = &mpk.group;
    let r = group.random_scalar(rng);
    let ct0 = group.exp_g(&r);
    let ct = [0, 1].map(|i| group.exp_g_signed(message[i]).mul(&mpk.pk_tables[i].pow(&r)));
    Ok(IpfeCiphertext { ct0, ct })
}

pub fn ipfe_keyder(msk: &IpfeSecretKey, y: [u64; SLOTS]) -> FunctionalKey {
    let group = &msk.group;
    let sk = group.scalar_add(
        &group.scalar_mul_u64(&msk.s[0], y[0]),
        &group.scalar_mul_u64(&msk.s[1], y[1]),
    );
    FunctionalKey { y, sk }
}

/// g^<m, y> without the discrete log.
pub fn ipfe_decrypt_element(mpk: &IpfePublicKey, ct: &IpfeCiphertext, fk: &FunctionalKey) -> GroupElement {
    let group = &mpk.group;
    let num = group.pow_u64(&ct.ct[0], fk.y[0]).mul(&group.pow_u64(&ct.ct[1], fk.y[1]));
    let neg_sk = group.scalar_from_i64(0);
    let neg_sk = if fk.sk == neg_sk {
        neg_sk
    } else {
        group.scalar(&(group.order() - fk.sk.value()))
    };
    num.mul(&group.pow(&ct.ct0, &neg_sk))
}

pub fn ipfe_decrypt(
    mpk: &IpfePublicKey,
    ct: &IpfeCiphertext,
    fk: &FunctionalKey,
    table: &DlogTable,
) -> Result<i64> {
    table.recover(&ipfe_decrypt_element(mpk, ct, fk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (IpfeMasterKeys, DlogTable, ChaCha20Rng) {
        let group = Group::standard(112).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let keys = ipfe_setup(&group, [100, 100], &mut rng);
        let table = DlogTable::build(&group, 100_000, 1024).unwrap();
        (keys, table, rng)
    }

    #[test]
    fn public_keys_are_generator_powers() {
        let (keys, _, _) = setup();
        let group = keys.mpk.group();
        assert_eq!(group.exp_g(&keys.msk.s[0]), keys.mpk.pk[0]);
        assert_eq!(group.exp_g(&keys.msk.s[1]), keys.mpk.pk[1]);
        assert!(keys.msk.matches(&keys.mpk));
    }

    #[test]
    fn fresh_setups_differ() {
        let (a, _, mut rng) = setup();
        let b = ipfe_setup(a.mpk.group(), [1, 1], &mut rng);
        assert_ne!(a.msk.s[0], b.msk.s[0]);
        assert!(!a.msk.matches(&b.mpk));
    }

    #[test]
    fn worked_vector_and_zero_cases() {
        let (keys, table, mut rng) = setup();
        let ct = ipfe_encrypt(&keys.mpk, [1, 2], &mut rng).unwrap();
        let fk = ipfe_keyder(&keys.msk, [3, 4]);
        assert_eq!(ipfe_decrypt(&keys.mpk, &ct, &fk, &table).unwrap(), 11);

        let zero = ipfe_encrypt(&keys.mpk, [0, 0], &mut rng).unwrap();
        assert_eq!(ipfe_decrypt(&keys.mpk, &zero, &fk, &table).unwrap(), 0);

        let null = ipfe_keyder(&keys.msk, [0, 0]);
        assert_eq!(null.sk.value(), &num_bigint::BigUint::from(0u32));
        assert_eq!(ipfe_decrypt(&keys.mpk, &ct, &null, &table).unwrap(), 0);

        let neg = ipfe_encrypt(&keys.mpk, [-9, 2], &mut rng).unwrap();
        let fk = ipfe_keyder(&keys.msk, [1, 6]);
        assert_eq!(ipfe_decrypt(&keys.mpk, &neg, &fk, &table).unwrap(), 3);
    }

    #[test]
    fn unit_key_is_first_secret() {
        let (keys, _, _) = setup();
        assert_eq!(ipfe_keyder(&keys.msk, [1, 0]).sk, keys.msk.s[0]);
    }

    #[test]
    fn bound_enforced_at_encrypt() {
        let (keys, _, mut rng) = setup();
        assert!(matches!(
            ipfe_encrypt(&keys.mpk, [101, 0], &mut rng),
            Err(Error::CoefficientOutOfBound { slot: 0, value: 101, bound: 100 })
        ));
        assert!(ipfe_encrypt(&keys.mpk, [0, -101], &mut rng).is_err());
        assert!(ipfe_encrypt(&keys.mpk, [-100, 100], &mut rng).is_ok());
    }

    #[test]
    fn out_of_window_result_reported() {
        let (keys, table, mut rng) = setup();
        let ct = ipfe_encrypt(&keys.mpk, [100, 100], &mut rng).unwrap();
        let fk = ipfe_keyder(&keys.msk, [600, 600]);
        assert!(matches!(
            ipfe_decrypt(&keys.mpk, &ct, &fk, &table),
            Err(Error::DlogOutOfWindow { .. })
        ));
    }

    #[test]
    fn key_encodings_round_trip() {
        let (keys, table, mut rng) = setup();
        let group = keys.mpk.group().clone();
        let mpk = IpfePublicKey::decode(&keys.mpk.encode()).unwrap();
        let msk = IpfeSecretKey::decode(&keys.msk.encode(), &group).unwrap();
        assert!(msk.matches(&mpk));
        let ct = ipfe_encrypt(&mpk, [5, -7], &mut rng).unwrap();
        let mut w = Writer::new();
        ct.write(&group, &mut w);
        let fk = ipfe_keyder(&msk, [2, 3]);
        fk.write(&group, &mut w);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        let ct2 = IpfeCiphertext::read(&group, &mut r).unwrap();
        let fk2 = FunctionalKey::read(&group, &mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(ct2, ct);
        assert_eq!(ipfe_decrypt(&keys.mpk, &ct2, &fk2, &table).unwrap(), -11);
    }
}
