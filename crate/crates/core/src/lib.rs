//! Single-path oblivious decision-tree inference across two non-colluding
//! cloud servers.
//!
//! The provider ships a shuffled, layer-encrypted tree; the user uploads
//! additive shares of its features once and goes offline; the servers walk the
//! one root-to-leaf path, alternating who learns each branch, with per-node
//! comparisons done through two-slot inner-product functional encryption.

pub mod bench;
pub mod codec;
pub mod error;
pub mod input_share;
pub mod ipfe;
pub mod keystore;
pub mod model_prep;
pub mod params;
pub mod primitives;
pub mod protocol;
pub mod selftest;
pub mod sharing;
pub mod tree;

pub use error::{Error, Result};
pub use params::ProtocolParams;
