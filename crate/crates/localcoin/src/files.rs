//! Chain and trust files.
//!
//! A chain file holds the canonical bytes of a chain: the genesis block and
//! then every block, each as a length-prefixed field. A trust file lists
//! central bank keys oldest first, one `central <hex>` line each.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use localcoin_core::chain::CoinChain;
use localcoin_core::crypto::{PublicKey, TrustStore};
use localcoin_core::encoding::{Canonical, DecodeError};

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: malformed chain: {source}", path.display())]
    Chain { path: PathBuf, source: DecodeError },
    #[error("{}: line {line}: {message}", path.display())]
    Trust {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl FileError {
    /// True when the file could not be read at all.
    pub fn is_io(&self) -> bool {
        matches!(self, FileError::Io { .. })
    }
}

fn read(path: &Path) -> Result<Vec<u8>, FileError> {
    fs::read(path).map_err(|source| FileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_chain(path: &Path) -> Result<CoinChain, FileError> {
    let bytes = read(path)?;
    CoinChain::from_canonical_bytes(&bytes).map_err(|source| FileError::Chain {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_chain(path: &Path, chain: &CoinChain) -> Result<(), FileError> {
    fs::write(path, chain.to_canonical_bytes()).map_err(|source| FileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn render_trust(trust: &TrustStore) -> String {
    trust
        .history()
        .iter()
        .map(|k| format!("central {k}\n"))
        .collect()
}

/// Parses trust file text; errors carry a 1-based line number.
pub fn parse_trust(text: &str) -> Result<TrustStore, (usize, String)> {
    let mut keys = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let words: Vec<&str> = raw
            .split('#')
            .next()
            .unwrap_or("")
            .split_whitespace()
            .collect();
        match words.as_slice() {
            [] => {}
            ["central", hex] => match PublicKey::from_hex(hex) {
                Some(k) => keys.push(k),
                None => return Err((i + 1, format!("bad key `{hex}`"))),
            },
            _ => {
                return Err((
                    i + 1,
                    format!("expected `central <hex>`, found `{}`", raw.trim()),
                ))
            }
        }
    }
    TrustStore::from_history(keys).ok_or((0, String::from("no central bank key")))
}

pub fn read_trust(path: &Path) -> Result<TrustStore, FileError> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    parse_trust(&text).map_err(|(line, message)| FileError::Trust {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub fn write_trust(path: &Path, trust: &TrustStore) -> Result<(), FileError> {
    fs::write(path, render_trust(trust)).map_err(|source| FileError::Io {
        path: path.to_path_buf(),
        source,
    })
}
