//! Group arithmetic, PRF, symmetric encryption and bounded discrete-log recovery.

pub mod dlog;
pub mod group;
pub mod prf;
pub mod ske;

pub use dlog::{DlogTable, Recovery, DEFAULT_BABY_STEPS};
pub use group::{FixedBase, Group, GroupElement, GroupParams, Scalar};
pub use prf::{prf_eval, PrfSeed};
pub use ske::{KeyRole, SymmetricKey};
