//! Per-coin local blockchain.
//!
//! A [`CoinChain`] starts with a central-bank-signed [`GenesisBlock`] and
//! grows by delivery, mined, fork and transfer blocks. Chains are immutable
//! values: appending and forking return new chains.

mod block;
pub mod pow;
mod validate;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub use block::{
    repudiation_message, Block, BlockContent, BlockVariant, CoinKind, GenesisBlock, Party, Seal,
    SecretNonce, SignedHash,
};
pub use pow::{schedule_status, MiningPolicy, ScheduleStatus};
pub use validate::{validate_chain, Failure, FailureCode, ValidationReport};

use crate::amount::{Amount, Timestamp};
use crate::crypto::{self, Certificate, Digest, KeyPair, PublicKey, TrustStore};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Default per-coin mint ceiling.
pub const DEFAULT_MINT_THRESHOLD: Amount = Amount::units(500);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("coin value must be positive")]
    NonPositiveValue,
    #[error("coin value {value} exceeds the per-coin threshold {threshold}")]
    ThresholdExceeded { value: Amount, threshold: Amount },
    #[error("hot coin expiration must precede its claim deadline")]
    BadDeadlines,
    #[error("block does not link to the chain tip")]
    BrokenLink,
    #[error("block timestamp {block} precedes the tip timestamp {tip}")]
    TimestampRegression { block: Timestamp, tip: Timestamp },
    #[error("block has no valid variant")]
    InvalidVariant,
    #[error("cannot extend past a transfer whose secret is withheld")]
    TipWithheld,
    #[error("fork amounts {a} + {b} do not equal the coin value {value}")]
    ValueConservation { a: Amount, b: Amount, value: Amount },
    #[error("fractioning is limited to cold coins")]
    HotCoinFork,
    #[error("signer is not the current holder")]
    NotHolder,
    #[error("secret nonce does not reproduce the transfer block hash")]
    SecretMismatch,
}

/// Identity of one spendable coin: its serial plus the last fork block on
/// its path, if it was fractioned.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoinId {
    pub serial: String,
    pub branch: Option<Digest>,
}

impl fmt::Display for CoinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serial)?;
        if let Some(b) = &self.branch {
            f.write_str("~")?;
            for byte in &b.0[..4] {
                write!(f, "{byte:02x}")?;
            }
        }
        Ok(())
    }
}

impl Canonical for CoinId {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.serial)
            .opt(self.branch.as_ref().map(|d| &d.0[..]));
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let serial = dec.string()?;
        let branch = dec.opt_fixed()?.map(Digest);
        Ok(CoinId { serial, branch })
    }
}

/// Who holds a coin: the minting bank until delivery, then a person.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Holder {
    Bank(PublicKey),
    Person(Party),
}

impl Holder {
    pub fn person(&self) -> Option<PublicKey> {
        match self {
            Holder::Person(p) => Some(p.person),
            Holder::Bank(_) => None,
        }
    }

    pub fn key(&self) -> PublicKey {
        match self {
            Holder::Person(p) => p.person,
            Holder::Bank(k) => *k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HolderStatus {
    /// Genesis only; the bank has not delivered the coin yet.
    Minted,
    /// Tip is not a transfer block.
    Held,
    /// Tip is a transfer cancelled by the beneficiary's repudiation.
    Repudiated,
    /// Tip is a transfer whose secret nonce has not been revealed.
    AwaitingReveal { beneficiary: Party },
    /// Tip is a completed transfer; the holder is its beneficiary.
    Transferred,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HolderView {
    pub holder: Holder,
    pub status: HolderStatus,
}

/// References to the keys and certificates a holder signs with.
#[derive(Clone, Copy)]
pub struct HolderCredentials<'a> {
    pub wallet: &'a KeyPair,
    pub person: &'a KeyPair,
    pub wallet_cert: &'a Certificate,
    pub person_cert: &'a Certificate,
    pub bank_cert: &'a Certificate,
}

impl HolderCredentials<'_> {
    pub fn party(&self) -> Party {
        Party {
            person: self.person.vk,
            wallet: self.wallet.vk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinChain {
    pub genesis: GenesisBlock,
    pub blocks: Vec<Block>,
}

pub fn mint_genesis(
    central: &KeyPair,
    bank_cert: Certificate,
    value: Amount,
    kind: CoinKind,
    now: Timestamp,
    serial: &str,
    threshold: Amount,
) -> Result<GenesisBlock, ChainError> {
    if value.is_zero() {
        return Err(ChainError::NonPositiveValue);
    }
    if value > threshold {
        return Err(ChainError::ThresholdExceeded { value, threshold });
    }
    if let CoinKind::Hot {
        expiration,
        claim_deadline,
    } = kind
    {
        if expiration >= claim_deadline {
            return Err(ChainError::BadDeadlines);
        }
    }
    let content = block::genesis_content(&central.vk, serial, value, now, &bank_cert, &kind);
    let hash = crypto::digest(&content);
    Ok(GenesisBlock {
        central_vk: central.vk,
        serial: serial.to_string(),
        value,
        timestamp: now,
        bank_cert,
        kind,
        hash,
        central_sig: central.sign(&hash.0),
    })
}

impl CoinChain {
    pub fn new(genesis: GenesisBlock) -> Self {
        CoinChain {
            genesis,
            blocks: Vec::new(),
        }
    }

    /// Block count including the genesis block.
    pub fn len(&self) -> usize {
        1 + self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn serial(&self) -> &str {
        &self.genesis.serial
    }

    pub fn kind(&self) -> CoinKind {
        self.genesis.kind
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn tip_link(&self) -> SignedHash {
        self.tip()
            .map_or_else(|| self.genesis.signed_hash(), Block::signed_hash)
    }

    pub fn tip_hash(&self) -> Digest {
        self.tip_link().hash
    }

    pub fn tip_timestamp(&self) -> Timestamp {
        self.tip().map_or(self.genesis.timestamp, Block::timestamp)
    }

    /// Value after the last fork block, or the minted value.
    pub fn value(&self) -> Amount {
        self.blocks
            .iter()
            .rev()
            .find_map(|b| b.content.child_value)
            .unwrap_or(self.genesis.value)
    }

    /// Hashes of the fork blocks along this chain, oldest first.
    pub fn fork_path(&self) -> Vec<Digest> {
        self.blocks
            .iter()
            .filter(|b| b.variant() == Some(BlockVariant::Fork))
            .map(|b| b.hash)
            .collect()
    }

    pub fn coin_id(&self) -> CoinId {
        CoinId {
            serial: self.genesis.serial.clone(),
            branch: self.fork_path().last().copied(),
        }
    }

    /// True if `self` is `other` or a block-wise prefix of it.
    pub fn is_prefix_of(&self, other: &CoinChain) -> bool {
        self.genesis.hash == other.genesis.hash
            && self.blocks.len() <= other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.hash == b.hash)
    }

    /// Returns a new chain with `block` appended.
    pub fn append_block(&self, block: Block) -> Result<CoinChain, ChainError> {
        if self.tip().is_some_and(Block::is_withheld) {
            return Err(ChainError::TipWithheld);
        }
        if block.variant().is_none() {
            return Err(ChainError::InvalidVariant);
        }
        if block.content.prev != self.tip_link() {
            return Err(ChainError::BrokenLink);
        }
        if block.timestamp() < self.tip_timestamp() {
            return Err(ChainError::TimestampRegression {
                block: block.timestamp(),
                tip: self.tip_timestamp(),
            });
        }
        let mut next = self.clone();
        next.blocks.push(block);
        Ok(next)
    }

    /// Splits the coin into two children of values `a` and `b`. Both
    /// children share this chain's history and end in a fork block signed by
    /// the current holder; the two fork blocks differ only in child value.
    pub fn fork(
        &self,
        a: Amount,
        b: Amount,
        holder: &HolderCredentials<'_>,
        now: Timestamp,
    ) -> Result<(CoinChain, CoinChain), ChainError> {
        if self.genesis.kind.is_hot() {
            return Err(ChainError::HotCoinFork);
        }
        let value = self.value();
        if a.is_zero() || b.is_zero() || a.checked_add(b) != Some(value) {
            return Err(ChainError::ValueConservation { a, b, value });
        }
        let view = current_holder(self)?;
        if view.holder != Holder::Person(holder.party())
            || matches!(view.status, HolderStatus::AwaitingReveal { .. })
        {
            return Err(ChainError::NotHolder);
        }
        let ts = now.max(self.tip_timestamp());
        let child = |v: Amount| BlockContent {
            prev: self.tip_link(),
            timestamp: ts,
            holder_cert: holder.person_cert.clone(),
            wallet_cert: holder.wallet_cert.clone(),
            bank_cert: holder.bank_cert.clone(),
            child_value: Some(v),
            invoice_serial: None,
            mined_nonce: None,
            secret_nonce: None,
        };
        let left = child(a).seal_by_holder(holder.wallet, holder.person);
        let right = child(b).seal_by_holder(holder.wallet, holder.person);
        Ok((self.append_block(left)?, self.append_block(right)?))
    }
}

/// Convenience wrapper over [`CoinChain::append_block`].
pub fn append_block(chain: &CoinChain, block: Block) -> Result<CoinChain, ChainError> {
    chain.append_block(block)
}

/// Convenience wrapper over [`CoinChain::fork`].
pub fn fork_chain(
    chain: &CoinChain,
    a: Amount,
    b: Amount,
    holder: &HolderCredentials<'_>,
    now: Timestamp,
) -> Result<(CoinChain, CoinChain), ChainError> {
    chain.fork(a, b, holder, now)
}

pub fn block_hash(block: &Block) -> Option<Digest> {
    block.recompute_hash()
}

/// Determines the holder from the chain alone.
///
/// The caller is expected to have validated the chain; this only rejects
/// chains whose structure makes the holder undefined (unknown variants, a
/// withheld transfer before the tip, a revealed nonce that does not match).
pub fn current_holder(chain: &CoinChain) -> Result<HolderView, ChainError> {
    let mut holder = Holder::Bank(chain.genesis.bank_cert.subject_vk);
    let last = chain.blocks.len();
    for (pos, block) in chain.blocks.iter().enumerate() {
        let variant = block.variant().ok_or(ChainError::InvalidVariant)?;
        if block.is_withheld() && pos + 1 != last {
            return Err(ChainError::TipWithheld);
        }
        holder = validate::holder_after(&holder, block, variant);
    }
    let status = match chain.tip() {
        None => HolderStatus::Minted,
        Some(tip) => match tip.variant() {
            Some(BlockVariant::Transfer) if tip.repudiation.is_some() => HolderStatus::Repudiated,
            Some(BlockVariant::Transfer) if tip.is_withheld() => HolderStatus::AwaitingReveal {
                beneficiary: tip.content.party(),
            },
            Some(BlockVariant::Transfer) => {
                if tip.recompute_hash() != Some(tip.hash) {
                    return Err(ChainError::SecretMismatch);
                }
                HolderStatus::Transferred
            }
            _ => HolderStatus::Held,
        },
    };
    Ok(HolderView { holder, status })
}

/// Picks the legitimate chain among uploads of one coin: the valid chain
/// with the most blocks; ties go to the earliest tip timestamp, then the
/// smallest tip hash.
pub fn longest_valid_chain<'a>(
    candidates: &'a [CoinChain],
    trust: &TrustStore,
    mining: Option<&MiningPolicy>,
    now: Timestamp,
) -> Option<&'a CoinChain> {
    candidates
        .iter()
        .filter(|c| validate_chain(c, trust, mining, now).valid())
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then(a.tip_timestamp().cmp(&b.tip_timestamp()))
                .then(a.tip_hash().cmp(&b.tip_hash()))
        })
}

impl Canonical for CoinChain {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.genesis);
        for b in &self.blocks {
            enc.nested(b);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let genesis = dec.nested()?;
        let mut blocks = Vec::new();
        while !dec.is_empty() {
            blocks.push(dec.nested()?);
        }
        Ok(CoinChain { genesis, blocks })
    }
}
