//! Printable repudiation strings for out-of-band delivery.
//!
//! Layout before encoding: block hash (32) || signature (64) || the first
//! four bytes of SHA-256 over those 96 bytes. Encoded as unpadded base32.

use alloc::string::String;
use alloc::vec::Vec;

use data_encoding::BASE32_NOPAD;

use crate::crypto::{self, Digest, Signature};
use crate::protocol::RepudiationEntry;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RepudiationStringError {
    #[error("not base32")]
    Encoding,
    #[error("expected 100 bytes, got {0}")]
    Length(usize),
    #[error("checksum mismatch")]
    Checksum,
}

pub fn export_repudiation_string(entry: &RepudiationEntry) -> String {
    let mut bytes = Vec::with_capacity(100);
    bytes.extend_from_slice(&entry.hash.0);
    bytes.extend_from_slice(&entry.signature.0);
    let check = crypto::digest(&bytes);
    bytes.extend_from_slice(&check.0[..4]);
    BASE32_NOPAD.encode(&bytes)
}

/// Parses a string produced by [`export_repudiation_string`]. Surrounding
/// whitespace is ignored; the signature itself is checked when applied.
pub fn import_repudiation_string(s: &str) -> Result<RepudiationEntry, RepudiationStringError> {
    let bytes = BASE32_NOPAD
        .decode(s.trim().as_bytes())
        .map_err(|_| RepudiationStringError::Encoding)?;
    if bytes.len() != 100 {
        return Err(RepudiationStringError::Length(bytes.len()));
    }
    if crypto::digest(&bytes[..96]).0[..4] != bytes[96..] {
        return Err(RepudiationStringError::Checksum);
    }
    let mut hash = [0u8; 32];
    hash.copy_from_slice(&bytes[..32]);
    let mut sig = [0u8; 64];
    sig.copy_from_slice(&bytes[32..96]);
    Ok(RepudiationEntry {
        hash: Digest(hash),
        signature: Signature(sig),
    })
}
