//! Key directory written by key generation and read by every other step.

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipfe::{IpfeMasterKeys, IpfePublicKey, IpfeSecretKey};
use crate::params::ProtocolParams;
use crate::primitives::{Group, GroupParams, KeyRole, SymmetricKey};
use crate::protocol::IssuedKeys;
use crate::sharing::RingParams;

pub const GROUP_FILE: &str = "group.bin";
pub const PARAMS_FILE: &str = "params.json";
pub const MPK_FILE: &str = "mpk.bin";
pub const MSK_FILE: &str = "msk.bin";
pub const SK_FILES: [&str; 3] = ["sk1.key", "sk2.key", "sk3.key"];

/// Public parameter summary, human readable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub security_bits: u32,
    pub ring_bits: u32,
    pub feature_bits: u32,
    pub slope_max: u64,
    pub a_max: u64,
    pub b_max: u64,
    pub window: u64,
}

impl ParamsFile {
    pub fn new(security_bits: u32, params: &ProtocolParams) -> Self {
        ParamsFile {
            security_bits,
            ring_bits: params.ring.bits(),
            feature_bits: params.feature_bits,
            slope_max: params.slope_max,
            a_max: params.a_max(),
            b_max: params.b_max(),
            window: params.window(),
        }
    }

    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let params = ProtocolParams { ring: RingParams::new(self.ring_bits)?, feature_bits: self.feature_bits, slope_max: self.slope_max };
        params.check()?;
        if ParamsFile::new(self.security_bits, &params) != *self {
            return Err(Error::KeyFile { file: PARAMS_FILE.into(), reason: "derived bounds do not match".into() });
        }
        Ok(params)
    }
}

/// Everything key generation issues, plus the parameters it was issued for.
#[derive(Clone, Debug)]
pub struct KeyStore {
    pub security_bits: u32,
    pub params: ProtocolParams,
    pub keys: IssuedKeys,
}

impl KeyStore {
    pub fn generate(security_bits: u32, params: ProtocolParams, rng: &mut ChaCha20Rng) -> Result<Self> {
        params.check()?;
        let group = Group::standard(security_bits)?;
        check_uniqueness(&group, &params)?;
        Ok(KeyStore { security_bits, params, keys: IssuedKeys::generate(&group, &params, rng) })
    }

    pub fn group(&self) -> &Group {
        self.keys.ipfe.mpk.group()
    }

    /// Writes all key files; refuses to overwrite unless `force`.
    pub fn save(&self, dir: &Path, force: bool) -> Result<()> {
        fs::create_dir_all(dir)?;
        let files = self.files();
        if !force {
            if let Some((name, _)) = files.iter().find(|(name, _)| dir.join(name).exists()) {
                return Err(Error::KeyFile { file: name.to_string(), reason: "already exists (use force to overwrite)".into() });
            }
        }
        for (name, bytes) in files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    fn files(&self) -> Vec<(&'static str, Vec<u8>)> {
        let params = ParamsFile::new(self.security_bits, &self.params);
        let mut json = serde_json::to_vec_pretty(&params).expect("params serialize");
        json.push(b'\n');
        vec![
            (GROUP_FILE, self.group().params().encode()),
            (PARAMS_FILE, json),
            (MPK_FILE, self.keys.ipfe.mpk.encode()),
            (MSK_FILE, self.keys.ipfe.msk.encode()),
            (SK_FILES[0], self.keys.sk1.to_file_bytes()),
            (SK_FILES[1], self.keys.sk2.to_file_bytes()),
            (SK_FILES[2], self.keys.sk3.to_file_bytes()),
        ]
    }

    /// Reads and cross-validates a key directory. Errors name the bad file.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            fs::read(dir.join(name)).map_err(|e| Error::KeyFile { file: name.into(), reason: e.to_string() })
        };

        let group_params = GroupParams::decode(&read(GROUP_FILE)?).map_err(named(GROUP_FILE))?;
        group_params.validate().map_err(named(GROUP_FILE))?;
        let params_file: ParamsFile =
            serde_json::from_slice(&read(PARAMS_FILE)?).map_err(|e| named(PARAMS_FILE)(e.into()))?;
        let params = params_file.protocol_params().map_err(named(PARAMS_FILE))?;
        if params_file.security_bits != group_params.security_bits {
            return Err(named(PARAMS_FILE)(Error::format("security level differs from the group")));
        }

        let mpk = IpfePublicKey::decode(&read(MPK_FILE)?).map_err(named(MPK_FILE))?;
        if mpk.group().params() != &group_params {
            return Err(named(MPK_FILE)(Error::format("issued for another group")));
        }
        if mpk.bounds() != [params.a_max(), params.b_max()] {
            return Err(named(MPK_FILE)(Error::format("coefficient bounds differ from the parameters")));
        }
        let group = mpk.group().clone();
        check_uniqueness(&group, &params)?;
        let msk = IpfeSecretKey::decode(&read(MSK_FILE)?, &group).map_err(named(MSK_FILE))?;
        if !msk.matches(&mpk) {
            return Err(named(MSK_FILE)(Error::format("does not match the public key")));
        }
        let mut sks = Vec::with_capacity(3);
        for (&name, role) in SK_FILES.iter().zip([KeyRole::Sk1, KeyRole::Sk2, KeyRole::Sk3]) {
            let key = SymmetricKey::from_file_bytes(&read(name)?).map_err(named(name))?;
            if key.role() != role {
                return Err(named(name)(Error::format(format!("holds role {:?}", key.role()))));
            }
            sks.push(key);
        }
        let [sk1, sk2, sk3]: [SymmetricKey; 3] = sks.try_into().expect("three keys");
        Ok(KeyStore {
            security_bits: group_params.security_bits,
            params,
            keys: IssuedKeys { ipfe: IpfeMasterKeys { mpk, msk }, sk1, sk2, sk3 },
        })
    }

    pub fn paths(dir: &Path) -> Vec<PathBuf> {
        [GROUP_FILE, PARAMS_FILE, MPK_FILE, MSK_FILE].iter().chain(SK_FILES.iter()).map(|f| dir.join(f)).collect()
    }
}

fn named(file: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::KeyFile { file: file.into(), reason: e.to_string() }
}

/// The per-share window must sit below q/2 so recovered exponents are unique.
pub fn check_uniqueness(group: &Group, params: &ProtocolParams) -> Result<()> {
    let span = num_bigint::BigUint::from(params.window()) * 2u32 + 1u32;
    if span >= *group.order() {
        return Err(Error::Infeasible(format!(
            "(A_max + B_max) * 2^l = {} is not below q/2 for the {}-bit group",
            params.window(),
            group.params().security_bits
        )));
    }
    Ok(())
}
