//! Prime-order subgroup of Z_p^* (Schnorr group) with Montgomery-form arithmetic.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crypto_bigint::modular::{BoxedMontyForm, BoxedMontyParams};
use crypto_bigint::{BoxedUint, NonZero, Odd, RandomBits};
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

const DERIVATION_LABEL: &str = "onepath/schnorr-group/v1";

/// Public parameters of a prime-order subgroup of Z_p^*.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupParams {
    pub p: BigUint,
    pub q: BigUint,
    pub g: BigUint,
    pub security_bits: u32,
}

impl fmt::Debug for GroupParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupParams")
            .field("security_bits", &self.security_bits)
            .field("p_bits", &self.p.bits())
            .field("q_bits", &self.q.bits())
            .finish()
    }
}

/// (modulus bits, subgroup order bits) per supported security level.
fn sizes(security_bits: u32) -> Result<(u32, u32)> {
    match security_bits {
        112 => Ok((2048, 224)),
        128 => Ok((3072, 256)),
        other => Err(Error::UnsupportedSecurityLevel(other)),
    }
}

impl GroupParams {
    /// Deterministically derives the group for `security_bits` from a fixed label.
    ///
    /// Derivation runs once per process and level; later calls return the cached result.
    pub fn setup(security_bits: u32) -> Result<GroupParams> {
        static CACHE: [OnceLock<GroupParams>; 2] = [OnceLock::new(), OnceLock::new()];
        sizes(security_bits)?;
        let slot = if security_bits == 112 { 0 } else { 1 };
        Ok(CACHE[slot].get_or_init(|| derive(security_bits)).clone())
    }

    /// Checks subgroup structure: q | p-1, g^q = 1, g != 1 and q is wide enough.
    pub fn validate(&self) -> Result<()> {
        let one = BigUint::one();
        let (p_bits, q_bits) = sizes(self.security_bits)?;
        if self.q.bits() < 2 * self.security_bits as u64 || self.q.bits() < q_bits as u64 {
            return Err(Error::InvalidGroup(format!("q has only {} bits", self.q.bits())));
        }
        if self.p.bits() < p_bits as u64 {
            return Err(Error::InvalidGroup(format!("p has only {} bits", self.p.bits())));
        }
        if !((&self.p - &one) % &self.q).is_zero() {
            return Err(Error::InvalidGroup("q does not divide p - 1".into()));
        }
        if self.g <= one || self.g >= self.p {
            return Err(Error::InvalidGroup("generator out of range".into()));
        }
        if !self.g.modpow(&self.q, &self.p).is_one() {
            return Err(Error::InvalidGroup("generator order is not q".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.security_bits);
        for v in [&self.p, &self.q, &self.g] {
            w.var_bytes(&v.to_bytes_be());
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let params = Self::read(&mut r)?;
        r.finish()?;
        Ok(params)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let security_bits = r.u32()?;
        let p = BigUint::from_bytes_be(r.var_bytes()?);
        let q = BigUint::from_bytes_be(r.var_bytes()?);
        let g = BigUint::from_bytes_be(r.var_bytes()?);
        Ok(GroupParams { p, q, g, security_bits })
    }
}

fn to_boxed(v: &BigUint, precision: u32) -> BoxedUint {
    BoxedUint::from_be_slice(&v.to_bytes_be(), precision).expect("value fits precision")
}

fn from_boxed(v: &BoxedUint) -> BigUint {
    BigUint::from_bytes_be(&v.to_be_bytes())
}

fn derive(security_bits: u32) -> GroupParams {
    let (p_bits, q_bits) = sizes(security_bits).expect("checked by caller");
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&Sha256::digest(format!("{DERIVATION_LABEL}/{security_bits}")));
    let mut rng = ChaCha20Rng::from_seed(seed);

    let q = loop {
        let top = BoxedUint::one_with_precision(q_bits) << (q_bits - 1);
        let c = BoxedUint::random_bits(&mut rng, q_bits) | top | BoxedUint::one_with_precision(q_bits);
        if crypto_primes::is_prime_with_rng(&mut rng, &c) {
            break c;
        }
    };
    let two_q = NonZero::new(q.widen(p_bits).shl(1)).expect("q is nonzero");
    let one = BoxedUint::one_with_precision(p_bits);
    let p = loop {
        let top = BoxedUint::one_with_precision(p_bits) << (p_bits - 1);
        let r = BoxedUint::random_bits(&mut rng, p_bits) | top;
        // Largest value <= r congruent to 1 mod 2q.
        let c = r.wrapping_sub(&r.rem_vartime(&two_q)).wrapping_add(&one);
        if c.bits() != p_bits {
            continue;
        }
        if crypto_primes::is_prime_with_rng(&mut rng, &c) {
            break c;
        }
    };

    let p = from_boxed(&p);
    let q = from_boxed(&q);
    let cofactor = (&p - 1u32) / &q;
    let mut h = BigUint::from(2u32);
    let g = loop {
        let g = h.modpow(&cofactor, &p);
        if !g.is_one() {
            break g;
        }
        h += 1u32;
    };
    GroupParams { p, q, g, security_bits }
}

/// Exponent modulo the group order q.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scalar(pub(crate) BigUint);

impl Scalar {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

/// Element of the order-q subgroup, kept in Montgomery form.
#[derive(Clone, PartialEq, Eq)]
pub struct GroupElement(BoxedMontyForm);

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({:016x}..)", self.lookup_key())
    }
}

impl GroupElement {
    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        GroupElement(self.0.mul(&other.0))
    }

    pub fn square(&self) -> GroupElement {
        GroupElement(self.0.square())
    }

    /// 64-bit fingerprint of the canonical Montgomery representation.
    #[allow(clippy::unnecessary_cast)]
    pub(crate) fn lookup_key(&self) -> u64 {
        self.0.as_montgomery().as_words()[0] as u64
    }
}

struct GroupInner {
    params: GroupParams,
    monty: Arc<BoxedMontyParams>,
    precision: u32,
    q_precision: u32,
    element_len: usize,
    generator: GroupElement,
    generator_table: OnceLock<FixedBase>,
}

/// Shared arithmetic context for one set of [`GroupParams`].
#[derive(Clone)]
pub struct Group {
    inner: Arc<GroupInner>,
}

impl fmt::Debug for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.inner.params.fmt(f)
    }
}

impl PartialEq for Group {
    fn eq(&self, other: &Self) -> bool {
        self.inner.params == other.inner.params
    }
}

impl Group {
    pub fn new(params: GroupParams) -> Result<Group> {
        params.validate()?;
        let precision = (params.p.bits() as u32).div_ceil(64) * 64;
        let q_precision = (params.q.bits() as u32).div_ceil(64) * 64;
        let modulus = Odd::new(to_boxed(&params.p, precision))
            .into_option()
            .ok_or_else(|| Error::InvalidGroup("even modulus".into()))?;
        let monty = Arc::new(BoxedMontyParams::new_vartime(modulus));
        let generator = GroupElement(BoxedMontyForm::new_with_arc(
            to_boxed(&params.g, precision),
            monty.clone(),
        ));
        let element_len = (params.p.bits() as usize).div_ceil(8);
        Ok(Group {
            inner: Arc::new(GroupInner {
                params,
                monty,
                precision,
                q_precision,
                element_len,
                generator,
                generator_table: OnceLock::new(),
            }),
        })
    }

    /// Group for a supported security level; shorthand for setup + new.
    pub fn standard(security_bits: u32) -> Result<Group> {
        Group::new(GroupParams::setup(security_bits)?)
    }

    pub fn params(&self) -> &GroupParams {
        &self.inner.params
    }

    pub fn order(&self) -> &BigUint {
        &self.inner.params.q
    }

    pub fn order_bits(&self) -> u32 {
        self.inner.params.q.bits() as u32
    }

    pub fn element_len(&self) -> usize {
        self.inner.element_len
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(BoxedMontyForm::one((*self.inner.monty).clone()))
    }

    pub fn generator(&self) -> &GroupElement {
        &self.inner.generator
    }

    fn generator_table(&self) -> &FixedBase {
        self.inner
            .generator_table
            .get_or_init(|| FixedBase::new(self, &self.inner.generator))
    }

    /// g^e using the precomputed generator table.
    pub fn exp_g(&self, e: &Scalar) -> GroupElement {
        self.generator_table().pow(e)
    }

    pub fn exp_g_signed(&self, e: i64) -> GroupElement {
        self.generator_table().pow(&self.scalar_from_i64(e))
    }

    /// base^e for an arbitrary base.
    pub fn pow(&self, base: &GroupElement, e: &Scalar) -> GroupElement {
        let exp = to_boxed(&e.0, self.inner.q_precision);
        GroupElement(base.0.pow_bounded_exp(&exp, self.order_bits()))
    }

    pub fn pow_u64(&self, base: &GroupElement, e: u64) -> GroupElement {
        let exp = BoxedUint::from(e);
        let bits = 64 - e.leading_zeros();
        GroupElement(base.0.pow_bounded_exp(&exp, bits.max(1)))
    }

    /// Inverse of an element of the order-q subgroup, as base^(q-1).
    pub fn invert(&self, base: &GroupElement) -> GroupElement {
        let q_minus_one = Scalar(self.order() - 1u32);
        self.pow(base, &q_minus_one)
    }

    pub fn is_identity(&self, e: &GroupElement) -> bool {
        *e == self.identity()
    }

    pub fn in_subgroup(&self, e: &GroupElement) -> bool {
        self.is_identity(&self.pow(e, &Scalar(self.order().clone())))
    }

    pub fn scalar(&self, v: &BigUint) -> Scalar {
        Scalar(v % self.order())
    }

    /// Centered signed encoding: negative values map to q - |v|.
    pub fn scalar_from_i64(&self, v: i64) -> Scalar {
        let magnitude = BigUint::from(v.unsigned_abs()) % self.order();
        if v < 0 && !magnitude.is_zero() {
            Scalar(self.order() - magnitude)
        } else {
            Scalar(magnitude)
        }
    }

    pub fn scalar_add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        Scalar((&a.0 + &b.0) % self.order())
    }

    pub fn scalar_mul_u64(&self, a: &Scalar, k: u64) -> Scalar {
        Scalar((&a.0 * k) % self.order())
    }

    pub fn random_scalar<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Scalar {
        // 64 extra bits make the modular bias negligible.
        let mut bytes = vec![0u8; (self.order_bits() as usize + 64).div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        Scalar(BigUint::from_bytes_be(&bytes) % self.order())
    }

    pub fn encode_scalar(&self, s: &Scalar) -> Vec<u8> {
        let len = (self.order_bits() as usize).div_ceil(8);
        let raw = s.0.to_bytes_be();
        let mut out = vec![0u8; len - raw.len()];
        out.extend_from_slice(&raw);
        out
    }

    pub fn decode_scalar(&self, bytes: &[u8]) -> Result<Scalar> {
        let v = BigUint::from_bytes_be(bytes);
        if &v >= self.order() {
            return Err(Error::format("scalar not reduced mod q"));
        }
        Ok(Scalar(v))
    }

    pub fn encode_element(&self, e: &GroupElement) -> Vec<u8> {
        let full = e.0.retrieve().to_be_bytes();
        full[full.len() - self.inner.element_len..].to_vec()
    }

    /// Decodes a fixed-width element. Range is checked; subgroup membership is not
    /// (see [`Group::in_subgroup`]) since it costs a full exponentiation.
    pub fn decode_element(&self, bytes: &[u8]) -> Result<GroupElement> {
        if bytes.len() != self.inner.element_len {
            return Err(Error::LengthMismatch { expected: self.inner.element_len, actual: bytes.len() });
        }
        let v = BigUint::from_bytes_be(bytes);
        if v.is_zero() || v >= self.inner.params.p {
            return Err(Error::format("group element out of range"));
        }
        Ok(self.element_from_biguint(&v))
    }

    pub(crate) fn element_from_biguint(&self, v: &BigUint) -> GroupElement {
        GroupElement(BoxedMontyForm::new_with_arc(
            to_boxed(v, self.inner.precision),
            self.inner.monty.clone(),
        ))
    }

    pub fn element_to_biguint(&self, e: &GroupElement) -> BigUint {
        from_boxed(&e.0.retrieve())
    }
}

/// Fixed-base exponentiation table with 8-bit windows: `rows[i][j - 1] = base^(j * 256^i)`.
pub struct FixedBase {
    rows: Vec<Vec<GroupElement>>,
    identity: GroupElement,
}

impl FixedBase {
    pub fn new(group: &Group, base: &GroupElement) -> FixedBase {
        let windows = (group.order_bits() as usize).div_ceil(8);
        let mut rows = Vec::with_capacity(windows);
        let mut row_base = base.clone();
        for _ in 0..windows {
            let mut row = Vec::with_capacity(255);
            let mut acc = row_base.clone();
            row.push(acc.clone());
            for _ in 1..255 {
                acc = acc.mul(&row_base);
                row.push(acc.clone());
            }
            // base^(256^(i+1)) = (last entry) * base^(256^i)
            row_base = acc.mul(&row_base);
            rows.push(row);
        }
        FixedBase { rows, identity: group.identity() }
    }

    pub fn pow(&self, e: &Scalar) -> GroupElement {
        let digits = e.0.to_bytes_le();
        let mut acc: Option<GroupElement> = None;
        for (row, &digit) in self.rows.iter().zip(digits.iter()) {
            if digit == 0 {
                continue;
            }
            let term = &row[digit as usize - 1];
            acc = Some(match acc {
                None => term.clone(),
                Some(a) => a.mul(term),
            });
        }
        acc.unwrap_or_else(|| self.identity.clone())
    }
}
