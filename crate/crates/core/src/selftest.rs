//! Invariant suite run by the `selftest` command.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::input_share::{open_seed, prepare_query};
use crate::ipfe::{ipfe_decrypt, ipfe_encrypt, ipfe_keyder, ipfe_setup};
use crate::keystore::KeyStore;
use crate::model_prep::{encode_linear, prepare_model};
use crate::params::ProtocolParams;
use crate::primitives::{prf_eval, DlogTable, Group, PrfSeed};
use crate::protocol::{Deployment, DeploymentConfig, IssuedKeys};
use crate::sharing::{reconstruct, split};
use crate::tree::random_complete_tree;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Timing-free, so identical seeds give byte-identical reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<SelfCheck>,
    /// SHA-256 over the canonical transcripts of every protocol run.
    pub transcript_digest: String,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&SelfCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct SelftestConfig {
    pub seed: u64,
    pub deployment: DeploymentConfig,
    /// Random trees for the protocol checks, depths 1..=max_depth.
    pub trees: usize,
    pub queries_per_tree: usize,
    pub max_depth: u32,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        SelftestConfig { seed: 0, deployment: DeploymentConfig::default(), trees: 6, queries_per_tree: 3, max_depth: 6 }
    }
}

const LABELS: &[&str] = &["outcome-negative", "outcome-positive", "outcome-uncertain"];

/// Runs every check; failures are reported, not returned as errors.
pub fn run_selftest(config: &SelftestConfig, keys_dir: Option<&Path>) -> SelftestReport {
    let mut checks = vec![];
    let mut push = |name: &'static str, result: Result<String>| {
        let (passed, detail) = match result {
            Ok(detail) => (true, detail),
            Err(e) => (false, e.to_string()),
        };
        checks.push(SelfCheck { name, passed, detail });
    };
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let params = config.deployment.params;

    if let Some(dir) = keys_dir {
        push("key-files", KeyStore::load(dir).map(|s| format!("{}-bit group, W = {}", s.security_bits, s.params.window())));
    }
    push("ipfe-vectors", ipfe_vectors(config, &mut rng));
    push("share-reconstruction", share_reconstruction(&params, &mut rng));
    push("mask-cancellation", mask_cancellation(config, &mut rng));
    push("encode-linear", encode_linear_exhaustive(&params, &mut rng));
    let mut digest = Sha256::new();
    let (oracle, audit) = protocol_runs(config, &mut rng, &mut digest);
    push("oracle-equivalence", oracle);
    push("leakage-audit", audit);
    SelftestReport {
        seed: config.seed,
        checks,
        transcript_digest: digest.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    }
}

fn fail(msg: String) -> crate::Error {
    crate::Error::OracleMismatch(msg)
}

fn ipfe_vectors(config: &SelftestConfig, rng: &mut ChaCha20Rng) -> Result<String> {
    let params = config.deployment.params;
    let group = Group::standard(config.deployment.security_bits)?;
    let table = DlogTable::shared(&group, params.window())?;
    let keys = ipfe_setup(&group, [params.a_max(), params.b_max()], rng);
    let cases: [([i64; 2], [u64; 2], i64); 3] = [([1, 2], [3, 4], 11), ([-9, 2], [1, 6], 3), ([0, 0], [7, 9], 0)];
    for (m, y, want) in cases {
        let ct = ipfe_encrypt(&keys.mpk, m, rng)?;
        let got = ipfe_decrypt(&keys.mpk, &ct, &ipfe_keyder(&keys.msk, y), &table)?;
        if got != want {
            return Err(fail(format!("{m:?} . {y:?} decrypted to {got}, expected {want}")));
        }
    }
    let mask = params.ring.mask();
    for _ in 0..20 {
        let m = [rng.gen_range(-(params.a_max() as i64)..=params.a_max() as i64), rng.gen_range(0..=params.b_max() as i64)];
        let y = [rng.gen_range(0..=mask), rng.gen_range(0..=mask)];
        let ct = ipfe_encrypt(&keys.mpk, m, rng)?;
        let got = ipfe_decrypt(&keys.mpk, &ct, &ipfe_keyder(&keys.msk, y), &table)?;
        let want = m[0] * y[0] as i64 + m[1] * y[1] as i64;
        if got != want {
            return Err(fail(format!("{m:?} . {y:?} decrypted to {got}, expected {want}")));
        }
    }
    Ok("3 fixed vectors and 20 random in-bound pairs".into())
}

fn share_reconstruction(params: &ProtocolParams, rng: &mut ChaCha20Rng) -> Result<String> {
    let ring = params.ring;
    for _ in 0..1000 {
        let v = ring.random(rng);
        let (a, b) = split(&ring, v, rng);
        if reconstruct(&ring, a, b)? != v {
            return Err(fail(format!("shares of {v} do not reconstruct")));
        }
        let signed = rng.gen_range(-(ring.half() as i64) + 1..ring.half() as i64);
        if ring.signed_decode(ring.signed_encode(signed)) != signed {
            return Err(fail(format!("signed round trip of {signed}")));
        }
    }
    Ok("1000 values over Z_2^l".into())
}

/// Per node: both servers' masked dot products plus offsets sum to the selected feature.
fn mask_cancellation(config: &SelftestConfig, rng: &mut ChaCha20Rng) -> Result<String> {
    let params = config.deployment.params;
    let ring = params.ring;
    let group = Group::standard(config.deployment.security_bits)?;
    let n = 5;
    let tree = random_complete_tree(rng, 3, n, params.feature_bits, LABELS)?;
    let keys = IssuedKeys::generate(&group, &params, rng);
    let seed = PrfSeed::sample(tree.gamma(), rng);
    let prepared = prepare_model(&tree, &keys.provider_keys(), &keys.ipfe.mpk, &seed, &params, rng)?;
    let opened = open_seed(&prepared.seed_ct, &keys.sk3)?;
    let x: Vec<u64> = (0..n).map(|_| rng.gen_range(0..params.feature_domain())).collect();
    let query = prepare_query(&x, &opened, &params, opened.gamma(), rng)?;
    for (k, node) in prepared.cs1_tree.nodes.iter().enumerate() {
        let position = k + 1;
        let index = prepared.index_map.index_of(position) as usize;
        let half = |s: &crate::sharing::ShareVector| -> Result<u64> {
            Ok(ring.add(ring.dot(&node.masked_feature, &s.features)?, s.offsets[index - 1]))
        };
        let sum = ring.add(half(&query.cs1)?, half(&query.cs2)?);
        let f = tree.node(position).feature as usize;
        if sum != x[f - 1] {
            return Err(fail(format!("node {position}: shares sum to {sum}, feature {f} is {}", x[f - 1])));
        }
        // The provider's mask is the public PRF at the shuffled index.
        let mask = prf_eval(&seed, index as u32, n, ring.bits())?;
        if ring.sub(node.masked_feature[f - 1], mask[f - 1]) != 1 {
            return Err(fail(format!("node {position}: selector does not pick feature {f}")));
        }
    }
    Ok(format!("{} nodes of a depth-3 tree", tree.gamma()))
}

/// Every threshold against every feature value, with random slopes.
fn encode_linear_exhaustive(params: &ProtocolParams, rng: &mut ChaCha20Rng) -> Result<String> {
    let domain = params.feature_domain();
    let mut evaluated = 0u64;
    for theta in 0..domain {
        let code = encode_linear(theta, params, rng);
        if code.a.unsigned_abs() > params.a_max() || code.b.unsigned_abs() > params.b_max() {
            return Err(fail(format!("coefficients for threshold {theta} exceed the bounds")));
        }
        for x in 0..domain {
            let r = code.eval(x);
            if (r > 1) != (x > theta) || r.unsigned_abs() >= params.ring.half() {
                return Err(fail(format!("threshold {theta}, x = {x}: R = {r}")));
            }
            evaluated += 1;
        }
    }
    Ok(format!("{evaluated} (threshold, value) pairs"))
}

fn protocol_runs(config: &SelftestConfig, rng: &mut ChaCha20Rng, digest: &mut Sha256) -> (Result<String>, Result<String>) {
    let mut queries = 0usize;
    let mut audits = 0usize;
    let mut audit_err = None;
    let oracle = (|| -> Result<String> {
        for t in 0..config.trees {
            let depth = 1 + (t as u32 % config.max_depth.max(1));
            let n = rng.gen_range(2..=8);
            let tree = random_complete_tree(rng, depth, n, config.deployment.params.feature_bits, LABELS)?;
            let mut dep = Deployment::setup(tree, &config.deployment, config.seed.wrapping_add(t as u64))?;
            for _ in 0..config.queries_per_tree {
                let x: Vec<u64> = (0..n).map(|_| rng.gen_range(0..config.deployment.params.feature_domain())).collect();
                let outcome = dep.query(&x)?;
                dep.verify(&outcome, &x)?;
                queries += 1;
                match dep.audit(&outcome).and_then(|r| r.into_result()) {
                    Ok(_) => audits += 1,
                    Err(e) => {
                        audit_err.get_or_insert(e);
                    }
                }
            }
            digest.update(dep.transcript().canonical_bytes());
        }
        Ok(format!("{queries} queries on {} random trees of depth 1..={}", config.trees, config.max_depth))
    })();
    let audit = match (audit_err, &oracle) {
        (Some(e), _) => Err(e),
        (None, Ok(_)) => Ok(format!("{audits} sessions audited")),
        (None, Err(_)) => Err(fail(format!("protocol runs aborted after {audits} audited sessions"))),
    };
    (oracle, audit)
}
