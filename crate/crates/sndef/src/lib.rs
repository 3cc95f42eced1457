//! Secure NFC readout stack for battery management systems.
//!
//! The crate provides the SNDEF secure record format, symmetric mutual
//! authentication with session key derivation, an encrypt-then-MAC secure
//! channel over four cipher suites, a simulated battery pack with
//! Active/On-Rest power semantics, a deterministic NFC link simulator with
//! adversary injection, and the scenario harness behind the `sndef` CLI.

pub mod auth;
pub mod codec;
pub mod crypto;
pub mod device;
pub mod fixture;
pub mod harness;
pub mod peer;
pub mod session;
pub mod transport;
