//! Lowers a validated program into a transaction dependency graph and
//! computes per-party staking requirements.

mod compile;
pub mod config;
pub mod stake;
pub mod tdg;

pub use compile::{compile, deadline_to_blocks};
pub use config::{Party, VesConfig};
pub use stake::{committable_subsets, stake_requirement, CapExceeded};
pub use tdg::{AccountRef, Meta, Payload, SessionParams, StateSlot, Tdg, TransactionWrapper, WrapperArg};

#[cfg(test)]
pub(crate) mod tests;
