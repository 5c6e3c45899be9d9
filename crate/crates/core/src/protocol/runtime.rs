//! Wiring the five entities together: key generation, provisioning and queries.

use std::sync::Arc;

use rand_chacha::ChaCha20Rng;

use super::audit::{leakage_audit, AuditReport, GroundTruth};
use super::entities::{entity_rng, leader_of, DataUser, Kgc, ModelProvider, Server};
use super::message::{EntityId, SessionId};
use super::transcript::{Observation, SessionCounters, Transcript};
use super::transport::{Actor, Network, Registry, Scheduler};
use crate::error::{Error, Result};
use crate::input_share::PreparedQuery;
use crate::ipfe::{ipfe_setup, IpfeMasterKeys};
use crate::model_prep::{prepare_model, PreparedModel, ProviderKeys};
use crate::params::{ProtocolParams, DEFAULT_SECURITY_BITS};
use crate::primitives::{DlogTable, Group, KeyRole, PrfSeed, SymmetricKey, DEFAULT_BABY_STEPS};
use crate::tree::{plaintext_infer, CompleteTree, PredictionPath};

#[derive(Clone, Debug)]
pub struct DeploymentConfig {
    pub security_bits: u32,
    pub params: ProtocolParams,
    pub baby_steps: u64,
    /// Keep payloads in the transcript (needed for subtree counting and wire scans).
    pub retain_payloads: bool,
    /// `None` delivers in global send order; `Some(seed)` picks random pairs.
    pub scheduler_seed: Option<u64>,
}

impl Default for DeploymentConfig {
    fn default() -> Self {
        DeploymentConfig {
            security_bits: DEFAULT_SECURITY_BITS,
            params: ProtocolParams::default(),
            baby_steps: DEFAULT_BABY_STEPS,
            retain_payloads: true,
            scheduler_seed: None,
        }
    }
}

/// Key material the key center issues at setup.
#[derive(Clone, Debug)]
pub struct IssuedKeys {
    pub ipfe: IpfeMasterKeys,
    pub sk1: SymmetricKey,
    pub sk2: SymmetricKey,
    pub sk3: SymmetricKey,
}

impl IssuedKeys {
    pub fn generate(group: &Group, params: &ProtocolParams, rng: &mut ChaCha20Rng) -> Self {
        IssuedKeys {
            ipfe: ipfe_setup(group, [params.a_max(), params.b_max()], rng),
            sk1: SymmetricKey::generate(KeyRole::Sk1, rng),
            sk2: SymmetricKey::generate(KeyRole::Sk2, rng),
            sk3: SymmetricKey::generate(KeyRole::Sk3, rng),
        }
    }

    pub fn provider_keys(&self) -> ProviderKeys {
        ProviderKeys { sk1: self.sk1.clone(), sk2: self.sk2.clone(), sk3: self.sk3.clone() }
    }
}

pub struct Entities {
    pub kgc: Kgc,
    pub mp: ModelProvider,
    pub cs1: Server,
    pub cs2: Server,
    pub du: DataUser,
}

impl Registry for Entities {
    fn actor_mut(&mut self, id: EntityId) -> Option<&mut dyn Actor> {
        Some(match id {
            EntityId::Kgc => &mut self.kgc,
            EntityId::Mp => &mut self.mp,
            EntityId::Cs1 => &mut self.cs1,
            EntityId::Cs2 => &mut self.cs2,
            EntityId::Du => &mut self.du,
        })
    }
}

/// One branch decision as the leader saw it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub layer: u32,
    pub leader: EntityId,
    pub value: i64,
    pub right: bool,
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub session: SessionId,
    pub label: Vec<u8>,
    pub expected_label: String,
    pub expected_path: PredictionPath,
    pub decisions: Vec<Decision>,
    pub counters: SessionCounters,
    /// Records the second server stored before this query.
    pub cs2_records_before: usize,
}

/// A running system: one model, its keys, and the five entities.
pub struct Deployment {
    group: Group,
    params: ProtocolParams,
    tree: CompleteTree,
    network: Network<Entities>,
    du_rng: ChaCha20Rng,
}

impl Deployment {
    /// Key generation, model preparation and provisioning, all randomness from `seed`.
    pub fn setup(tree: CompleteTree, config: &DeploymentConfig, seed: u64) -> Result<Self> {
        let params = config.params;
        params.check()?;
        if tree.feature_bits() != params.feature_bits {
            return Err(Error::ShapeMismatch(format!(
                "tree uses {} feature bits, deployment {}",
                tree.feature_bits(),
                params.feature_bits
            )));
        }
        let group = Group::standard(config.security_bits)?;
        let mut transcript = Transcript::new(config.retain_payloads);
        let started = std::time::Instant::now();
        let mut kgc_rng = entity_rng(seed, EntityId::Kgc);
        let keys = IssuedKeys::generate(&group, &params, &mut kgc_rng);
        transcript.add_compute(EntityId::Kgc, started.elapsed().as_nanos() as u64);

        let started = std::time::Instant::now();
        let mut mp_rng = entity_rng(seed, EntityId::Mp);
        let prf_seed = PrfSeed::sample(tree.gamma(), &mut mp_rng);
        let prepared = prepare_model(&tree, &keys.provider_keys(), &keys.ipfe.mpk, &prf_seed, &params, &mut mp_rng)?;
        transcript.add_compute(EntityId::Mp, started.elapsed().as_nanos() as u64);

        Self::provision(tree, config, &keys, prepared, transcript, seed)
    }

    /// Starts the entities from existing keys and a prepared model, then
    /// delivers the provider's provisioning messages.
    pub fn from_parts(
        tree: CompleteTree,
        config: &DeploymentConfig,
        keys: &IssuedKeys,
        prepared: PreparedModel,
        seed: u64,
    ) -> Result<Self> {
        config.params.check()?;
        let transcript = Transcript::new(config.retain_payloads);
        Self::provision(tree, config, keys, prepared, transcript, seed)
    }

    fn provision(
        tree: CompleteTree,
        config: &DeploymentConfig,
        keys: &IssuedKeys,
        prepared: PreparedModel,
        transcript: Transcript,
        seed: u64,
    ) -> Result<Self> {
        let params = config.params;
        let group = keys.ipfe.mpk.group().clone();
        if prepared.cs1_tree.gamma() != tree.gamma() as usize || prepared.cs1_tree.params != params {
            return Err(Error::ShapeMismatch("prepared model does not match the tree or parameters".into()));
        }
        let table = if config.baby_steps == DEFAULT_BABY_STEPS {
            DlogTable::shared(&group, params.window())?
        } else {
            Arc::new(DlogTable::build(&group, params.window(), config.baby_steps)?)
        };
        let mpk = Arc::new(keys.ipfe.mpk.clone());
        let entities = Entities {
            kgc: Kgc::new(group.clone(), keys.ipfe.msk.clone(), params),
            mp: ModelProvider::new(group.clone(), prepared),
            cs1: Server::new(EntityId::Cs1, keys.sk1.clone(), group.clone(), mpk.clone(), table.clone()),
            cs2: Server::new(EntityId::Cs2, keys.sk2.clone(), group.clone(), mpk, table),
            du: DataUser::new(group.clone(), keys.sk3.clone(), params),
        };
        let scheduler = match config.scheduler_seed {
            None => Scheduler::Fifo,
            Some(s) => Scheduler::random(s),
        };
        let mut network = Network::new(entities, scheduler, transcript);
        for msg in network.registry().mp.provisioning() {
            network.send(msg)?;
        }
        network.run_until_idle()?;
        if !network.registry().du.has_seed() {
            return Err(Error::protocol(EntityId::Du, "seed was not relayed"));
        }
        Ok(Deployment { group, params, tree, network, du_rng: entity_rng(seed, EntityId::Du) })
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn tree(&self) -> &CompleteTree {
        &self.tree
    }

    pub fn prepared(&self) -> &PreparedModel {
        self.network.registry().mp.prepared()
    }

    pub fn transcript(&self) -> &Transcript {
        self.network.transcript()
    }

    pub fn entities(&self) -> &Entities {
        self.network.registry()
    }

    pub fn network_mut(&mut self) -> &mut Network<Entities> {
        &mut self.network
    }

    /// The user's single upload; nothing is delivered until [`run`](Self::run).
    pub fn submit(&mut self, x: &[u64]) -> Result<SessionId> {
        self.tree.check_input(x)?;
        let rng = &mut self.du_rng;
        let (query, messages) = self.network.timed(EntityId::Du, |e| e.du.prepare(x, rng))?;
        for msg in messages {
            self.network.send(msg)?;
        }
        Ok(query.session)
    }

    /// Submits shares prepared outside the deployment.
    pub fn submit_prepared(&mut self, query: &PreparedQuery) -> Result<SessionId> {
        let messages = self.network.timed(EntityId::Du, |e| e.du.adopt(query))?;
        for msg in messages {
            self.network.send(msg)?;
        }
        Ok(query.session)
    }

    pub fn run(&mut self) -> Result<u64> {
        self.network.run_until_idle()
    }

    pub fn label(&self, session: SessionId) -> Option<&[u8]> {
        self.network.registry().du.result(session)
    }

    pub fn decisions(&self, session: SessionId) -> Vec<Decision> {
        let mut out: Vec<Decision> = self
            .transcript()
            .session_observations(session)
            .filter_map(|o| match *o {
                Observation::Decided { leader, layer, value, right, .. } => {
                    Some(Decision { layer, leader, value, right })
                }
                _ => None,
            })
            .collect();
        out.sort_by_key(|d| d.layer);
        out
    }

    /// Runs one query end to end and collects everything needed to check it.
    pub fn query(&mut self, x: &[u64]) -> Result<QueryOutcome> {
        let cs2_records_before = self.entities().cs2.stored_records();
        let session = self.submit(x)?;
        self.run()?;
        self.outcome(session, x, cs2_records_before)
    }

    pub fn outcome(&self, session: SessionId, x: &[u64], cs2_records_before: usize) -> Result<QueryOutcome> {
        let label = self
            .label(session)
            .ok_or_else(|| Error::protocol(EntityId::Du, format!("no label delivered for {session}")))?
            .to_vec();
        let (expected, path) = plaintext_infer(&self.tree, x);
        Ok(QueryOutcome {
            session,
            label,
            expected_label: expected.to_owned(),
            expected_path: path,
            decisions: self.decisions(session),
            counters: self.transcript().cross_check(session)?,
            cs2_records_before,
        })
    }

    /// Checks a finished query against the plaintext oracle and the provider's
    /// ground truth: label, path, per-node values and one-path counters.
    pub fn verify(&self, outcome: &QueryOutcome, x: &[u64]) -> Result<()> {
        let d = self.tree.depth();
        if outcome.label != outcome.expected_label.as_bytes() {
            return Err(Error::OracleMismatch(format!(
                "label {:?}, oracle says {:?}",
                String::from_utf8_lossy(&outcome.label),
                outcome.expected_label
            )));
        }
        if outcome.decisions.len() != d as usize {
            return Err(Error::OracleMismatch(format!("{} decisions for depth {d}", outcome.decisions.len())));
        }
        let positions = outcome.expected_path.positions();
        let prepared = self.prepared();
        for (k, decision) in outcome.decisions.iter().enumerate() {
            let layer = k as u32 + 1;
            let pos = positions[k];
            let node = self.tree.node(pos);
            let expected = prepared.coefficients[pos - 1].eval(x[node.feature as usize - 1]);
            if decision.layer != layer || decision.leader != leader_of(layer) {
                return Err(Error::OracleMismatch(format!("layer {layer} decided by {}", decision.leader)));
            }
            if decision.value != expected {
                return Err(Error::OracleMismatch(format!(
                    "layer {layer}: reconstructed R = {}, A + B x = {expected}",
                    decision.value
                )));
            }
            if decision.right != outcome.expected_path.directions[k] {
                return Err(Error::OracleMismatch(format!("layer {layer} branched the wrong way")));
            }
        }
        let c = &outcome.counters;
        let d64 = d as u64;
        let expected_nodes = (1u64 << (d + 1)) - 2 - d64;
        if c.sine_evaluations != d64 || c.fe_decryptions != 2 * d64 {
            return Err(Error::OracleMismatch(format!(
                "{} evaluations and {} decryptions at depth {d}",
                c.sine_evaluations, c.fe_decryptions
            )));
        }
        if c.subtree_nodes_sent != expected_nodes {
            return Err(Error::OracleMismatch(format!(
                "{} node records sent, expected {expected_nodes}",
                c.subtree_nodes_sent
            )));
        }
        if c.user_uploads != 3 || c.user_downloads != 1 {
            return Err(Error::OracleMismatch("user interaction is not one-shot".into()));
        }
        Ok(())
    }

    /// Leakage audit of a finished query.
    pub fn audit(&self, outcome: &QueryOutcome) -> Result<AuditReport> {
        let truth = GroundTruth {
            tree: &self.tree,
            prepared: self.prepared(),
            path: &outcome.expected_path,
            cs2_records_before: outcome.cs2_records_before,
        };
        leakage_audit(self.transcript(), outcome.session, &truth, &self.group)
    }
}
