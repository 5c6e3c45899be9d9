//! Entities, wire messages, transport and the traversal protocol.

pub mod audit;
pub mod entities;
pub mod message;
pub mod payload;
pub mod runtime;
pub mod transcript;
pub mod transport;

pub use audit::{leakage_audit, AuditCheck, AuditReport, GroundTruth};
pub use entities::{entity_rng, leader_of, DataUser, Kgc, ModelProvider, Server};
pub use message::{EntityId, Message, MessageKind, SessionId};
pub use payload::Payload;
pub use runtime::{Decision, Deployment, DeploymentConfig, Entities, IssuedKeys, QueryOutcome};
pub use transcript::{Observation, SessionCounters, Transcript, TranscriptEntry};
pub use transport::{Actor, Network, Outbox, Receipt, Registry, Scheduler};
