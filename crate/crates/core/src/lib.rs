//! Cross-chain dApp execution: an HSL compiler producing transaction
//! dependency graphs, simulated blockchains, a Network Status Blockchain,
//! an insurance smart contract, the VES and client protocol parties, and a
//! deterministic adversarial network to run them on.

pub mod chain;
pub mod codec;
pub mod compiler;
pub mod crypto;
pub mod harness;
pub mod hsl;
pub mod isc;
pub mod merkle;
pub mod netsim;
pub mod nsb;
pub mod parties;
pub mod value;
