#![no_std]

extern crate alloc;

pub mod amount;
pub mod chain;
pub mod crypto;
pub mod encoding;
pub mod institutions;
pub mod protocol;
pub mod sim;
pub mod wallet;

#[cfg(test)]
mod testkit;

pub use amount::{Amount, Timestamp};
pub use chain::{CoinChain, CoinId, FailureCode, ValidationReport};
pub use crypto::{KeyPair, PublicKey, TrustStore};
