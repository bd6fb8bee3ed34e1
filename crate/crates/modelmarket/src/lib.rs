//! Deterministic desk-scale simulator for a decentralized model
//! marketplace: models are benchmarked inside simulated enclaves anchored
//! to a simulated blockchain, priced through a bi-level revenue/utility
//! program, and traded through a fair commit-reveal swap. An adversary
//! harness turns the design's security claims into executable checks.

pub mod benchmark;
pub mod contracts;
pub mod crypto;
pub mod enclave;
pub mod ledger;
pub mod pricing;
pub mod protocol;
pub mod relay;
pub mod scenario;
pub mod transcript;
pub mod wire;
