//! Authenticated symmetric encryption (ChaCha20-Poly1305, random 96-bit nonces).

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
/// Bytes added by one encryption layer.
pub const OVERHEAD: usize = NONCE_LEN + TAG_LEN;

const KEY_FILE_MAGIC: &[u8; 4] = b"OP1K";
const KEY_FILE_VERSION: u8 = 1;

/// Which party a symmetric key was issued for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyRole {
    /// Held by the first cloud server.
    Sk1,
    /// Held by the second cloud server.
    Sk2,
    /// Held by the data user; protects labels and the PRF seed.
    Sk3,
}

impl KeyRole {
    pub fn tag(self) -> u8 {
        match self {
            KeyRole::Sk1 => 1,
            KeyRole::Sk2 => 2,
            KeyRole::Sk3 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(KeyRole::Sk1),
            2 => Ok(KeyRole::Sk2),
            3 => Ok(KeyRole::Sk3),
            other => Err(Error::format(format!("unknown key role tag {other}"))),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    role: KeyRole,
    bytes: [u8; KEY_LEN],
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricKey").field("role", &self.role).finish_non_exhaustive()
    }
}

impl SymmetricKey {
    pub fn generate<R: RngCore + CryptoRng>(role: KeyRole, rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        SymmetricKey { role, bytes }
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.bytes));
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let sealed = cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .expect("in-memory encryption cannot fail");
        let mut out = Vec::with_capacity(OVERHEAD + plaintext.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&sealed);
        out
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>> {
        if ciphertext.len() < OVERHEAD {
            return Err(Error::Authentication);
        }
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.bytes));
        let (nonce, sealed) = ciphertext.split_at(NONCE_LEN);
        cipher
            .decrypt(Nonce::from_slice(nonce), sealed)
            .map_err(|_| Error::Authentication)
    }

    /// Key file: magic "OP1K", version, role tag, key bytes.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(KEY_FILE_MAGIC).u8(KEY_FILE_VERSION).u8(self.role.tag()).bytes(&self.bytes);
        w.finish()
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(KEY_FILE_MAGIC)?;
        let version = r.u8()?;
        if version != KEY_FILE_VERSION {
            return Err(Error::format(format!("unsupported key file version {version}")));
        }
        let role = KeyRole::from_tag(r.u8()?)?;
        let bytes = r.array::<KEY_LEN>()?;
        r.finish()?;
        Ok(SymmetricKey { role, bytes })
    }
}

/// Node indexes are encrypted as fixed 4-byte big-endian values.
pub fn encode_index(index: u32) -> [u8; 4] {
    index.to_be_bytes()
}

pub fn decode_index(bytes: &[u8]) -> Result<u32> {
    let arr: [u8; 4] = bytes
        .try_into()
        .map_err(|_| Error::format(format!("index plaintext has {} bytes", bytes.len())))?;
    Ok(u32::from_be_bytes(arr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn keys() -> (SymmetricKey, SymmetricKey, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let sk1 = SymmetricKey::generate(KeyRole::Sk1, &mut rng);
        let sk2 = SymmetricKey::generate(KeyRole::Sk2, &mut rng);
        (sk1, sk2, rng)
    }

    #[test]
    fn round_trip_single_byte() {
        let (sk1, _, mut rng) = keys();
        let ct = sk1.encrypt(&[7], &mut rng);
        assert_eq!(sk1.decrypt(&ct).unwrap(), vec![7]);
    }

    #[test]
    fn layered_peel_order() {
        let (sk1, sk2, mut rng) = keys();
        let inner = sk1.encrypt(&encode_index(42), &mut rng);
        let outer = sk2.encrypt(&inner, &mut rng);
        assert_eq!(outer.len(), 4 + 2 * OVERHEAD);
        // Wrong order fails authentication.
        assert!(matches!(sk1.decrypt(&outer), Err(Error::Authentication)));
        let peeled = sk2.decrypt(&outer).unwrap();
        assert_eq!(decode_index(&sk1.decrypt(&peeled).unwrap()).unwrap(), 42);
    }

    #[test]
    fn wrong_key_and_tamper_rejected() {
        let (sk1, sk2, mut rng) = keys();
        let mut ct = sk1.encrypt(b"label", &mut rng);
        assert!(matches!(sk2.decrypt(&ct), Err(Error::Authentication)));
        ct[NONCE_LEN] ^= 1;
        assert!(matches!(sk1.decrypt(&ct), Err(Error::Authentication)));
        assert!(matches!(sk1.decrypt(&[0u8; 5]), Err(Error::Authentication)));
    }

    #[test]
    fn key_file_round_trip_and_corruption() {
        let (sk1, _, _) = keys();
        let bytes = sk1.to_file_bytes();
        assert_eq!(&bytes[..4], b"OP1K");
        assert_eq!(SymmetricKey::from_file_bytes(&bytes).unwrap(), sk1);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SymmetricKey::from_file_bytes(&bad).is_err());
        assert!(SymmetricKey::from_file_bytes(&bytes[..20]).is_err());
    }
}
