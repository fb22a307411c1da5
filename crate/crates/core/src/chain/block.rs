//! Genesis and non-genesis blocks of a coin's local chain.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest as _, Sha256};

use crate::amount::{Amount, Timestamp};
use crate::crypto::{self, Certificate, Digest, KeyPair, PublicKey, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Domain tag for the beneficiary's cancellation signature.
const REPUDIATION_TAG: &[u8] = b"localcoin/repudiation/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinKind {
    Cold,
    Hot {
        expiration: Timestamp,
        claim_deadline: Timestamp,
    },
}

impl CoinKind {
    pub fn is_hot(&self) -> bool {
        matches!(self, CoinKind::Hot { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoinKind::Cold => "cold",
            CoinKind::Hot { .. } => "hot",
        }
    }

    pub fn expiration(&self) -> Option<Timestamp> {
        match self {
            CoinKind::Hot { expiration, .. } => Some(*expiration),
            CoinKind::Cold => None,
        }
    }

    pub fn claim_deadline(&self) -> Option<Timestamp> {
        match self {
            CoinKind::Hot { claim_deadline, .. } => Some(*claim_deadline),
            CoinKind::Cold => None,
        }
    }
}

/// 128-bit value withheld from the receiver until it approves the chain.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretNonce(pub [u8; 16]);

impl fmt::Debug for SecretNonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretNonce(..)")
    }
}

/// The previous block's hash together with its final holder signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedHash {
    pub hash: Digest,
    pub signature: Signature,
}

impl SignedHash {
    fn to_bytes(self) -> [u8; 96] {
        let mut out = [0u8; 96];
        out[..32].copy_from_slice(&self.hash.0);
        out[32..].copy_from_slice(&self.signature.0);
        out
    }

    fn from_bytes(b: [u8; 96]) -> Self {
        SignedHash {
            hash: Digest(b[..32].try_into().expect("32")),
            signature: Signature(b[32..].try_into().expect("64")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenesisBlock {
    pub central_vk: PublicKey,
    pub serial: String,
    pub value: Amount,
    pub timestamp: Timestamp,
    pub bank_cert: Certificate,
    pub kind: CoinKind,
    pub hash: Digest,
    pub central_sig: Signature,
}

impl GenesisBlock {
    /// Canonical bytes of the fields before `hash`.
    pub fn content_bytes(&self) -> Vec<u8> {
        genesis_content(
            &self.central_vk,
            &self.serial,
            self.value,
            self.timestamp,
            &self.bank_cert,
            &self.kind,
        )
    }

    pub fn recompute_hash(&self) -> Digest {
        crypto::digest(&self.content_bytes())
    }

    pub fn signed_hash(&self) -> SignedHash {
        SignedHash {
            hash: self.hash,
            signature: self.central_sig,
        }
    }
}

pub(crate) fn genesis_content(
    central_vk: &PublicKey,
    serial: &str,
    value: Amount,
    timestamp: Timestamp,
    bank_cert: &Certificate,
    kind: &CoinKind,
) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.field(&central_vk.0)
        .str(serial)
        .u64(value.minor())
        .u64(timestamp.0)
        .nested(bank_cert)
        .opt_u64(kind.expiration().map(|t| t.0))
        .opt_u64(kind.claim_deadline().map(|t| t.0));
    enc.finish()
}

impl Canonical for GenesisBlock {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.content_bytes())
            .field(&self.hash.0)
            .field(&self.central_sig.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let central_vk = PublicKey(dec.fixed()?);
        let serial = dec.string()?;
        if serial.is_empty() {
            return dec.invalid("empty serial");
        }
        let value = Amount::from_minor(dec.u64()?);
        let timestamp = Timestamp(dec.u64()?);
        let bank_cert = dec.nested()?;
        let kind = match (dec.opt_u64()?, dec.opt_u64()?) {
            (None, None) => CoinKind::Cold,
            (Some(e), Some(c)) if e < c => CoinKind::Hot {
                expiration: Timestamp(e),
                claim_deadline: Timestamp(c),
            },
            _ => return dec.invalid("coin kind deadlines"),
        };
        let hash = Digest(dec.fixed()?);
        let central_sig = Signature(dec.fixed()?);
        Ok(GenesisBlock {
            central_vk,
            serial,
            value,
            timestamp,
            bank_cert,
            kind,
            hash,
            central_sig,
        })
    }
}

/// The hashed part of a non-genesis block, in field order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockContent {
    pub prev: SignedHash,
    pub timestamp: Timestamp,
    pub holder_cert: Certificate,
    pub wallet_cert: Certificate,
    pub bank_cert: Certificate,
    pub child_value: Option<Amount>,
    pub invoice_serial: Option<u64>,
    pub mined_nonce: Option<u64>,
    pub secret_nonce: Option<SecretNonce>,
}

impl BlockContent {
    /// Encoded fields up to and including `invoice_serial`.
    pub(crate) fn prefix_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(&self.prev.to_bytes())
            .u64(self.timestamp.0)
            .nested(&self.holder_cert)
            .nested(&self.wallet_cert)
            .nested(&self.bank_cert)
            .opt_u64(self.child_value.map(Amount::minor))
            .opt_u64(self.invoice_serial);
        enc.finish()
    }

    pub(crate) fn suffix_bytes(mined_nonce: Option<u64>, secret: Option<&SecretNonce>) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.opt_u64(mined_nonce).opt(secret.map(|s| &s.0[..]));
        enc.finish()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.prefix_bytes();
        out.extend(Self::suffix_bytes(
            self.mined_nonce,
            self.secret_nonce.as_ref(),
        ));
        out
    }

    pub fn hash(&self) -> Digest {
        crypto::digest(&self.canonical_bytes())
    }

    /// Searches `mined_nonce` values from zero until the content hash has at
    /// least `bits` leading zero bits. Sets the nonce and returns the hash.
    pub fn mine(&mut self, bits: u32) -> Digest {
        let mut prefix = Sha256::new();
        prefix.update(self.prefix_bytes());
        let mut nonce = 0u64;
        loop {
            let mut hasher = prefix.clone();
            hasher.update(Self::suffix_bytes(Some(nonce), self.secret_nonce.as_ref()));
            let hash = Digest(hasher.finalize().into());
            if hash.leading_zero_bits() >= bits {
                self.mined_nonce = Some(nonce);
                return hash;
            }
            nonce = nonce.checked_add(1).expect("nonce space exhausted");
        }
    }

    pub fn party(&self) -> Party {
        Party {
            person: self.holder_cert.subject_vk,
            wallet: self.wallet_cert.subject_vk,
        }
    }

    pub fn variant(&self) -> Option<BlockVariant> {
        match (
            self.child_value,
            self.invoice_serial,
            self.mined_nonce,
            self.secret_nonce,
        ) {
            (Some(_), None, None, None) => Some(BlockVariant::Fork),
            (None, Some(_), _, _) => Some(BlockVariant::Transfer),
            (None, None, Some(_), None) => Some(BlockVariant::Mined),
            (None, None, None, None) => Some(BlockVariant::Delivery),
            _ => None,
        }
    }

    /// Seals with the holder's wallet key, then the person key over the
    /// wallet signature.
    pub fn seal_by_holder(self, wallet: &KeyPair, person: &KeyPair) -> Block {
        let hash = self.hash();
        self.seal_by_holder_with_hash(hash, wallet, person)
    }

    pub(crate) fn seal_by_holder_with_hash(
        self,
        hash: Digest,
        wallet: &KeyPair,
        person: &KeyPair,
    ) -> Block {
        let primary = wallet.sign(&hash.0);
        let secondary = person.sign(&primary.0);
        Block {
            content: self,
            hash,
            seal: Seal {
                primary,
                secondary: Some(secondary),
            },
            repudiation: None,
        }
    }

    /// Seals with a single key: the bank for delivery, the wallet for mined blocks.
    pub fn seal_single(self, signer: &KeyPair) -> Block {
        let hash = self.hash();
        self.seal_single_with_hash(hash, signer)
    }

    pub(crate) fn seal_single_with_hash(self, hash: Digest, signer: &KeyPair) -> Block {
        let primary = signer.sign(&hash.0);
        Block {
            content: self,
            hash,
            seal: Seal {
                primary,
                secondary: None,
            },
            repudiation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// Bank → customer second block.
    Delivery,
    /// Proof-of-work block of a dynamic chain, signed by the wallet only.
    Mined,
    /// Fractioning block carrying one child's value.
    Fork,
    /// Ownership transfer carrying an invoice serial and a secret nonce.
    Transfer,
}

impl BlockVariant {
    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::Delivery => "delivery",
            BlockVariant::Mined => "mined",
            BlockVariant::Fork => "fork",
            BlockVariant::Transfer => "transfer",
        }
    }
}

/// A person key with its certified wallet key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Party {
    pub person: PublicKey,
    pub wallet: PublicKey,
}

/// Signatures over a block hash. `primary` signs the hash; `secondary`, when
/// present, is the person signature over `primary`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seal {
    pub primary: Signature,
    pub secondary: Option<Signature>,
}

impl Seal {
    /// The signature that the next block links to.
    pub fn final_signature(&self) -> Signature {
        self.secondary.unwrap_or(self.primary)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub content: BlockContent,
    pub hash: Digest,
    pub seal: Seal,
    pub repudiation: Option<Signature>,
}

impl Block {
    pub fn variant(&self) -> Option<BlockVariant> {
        self.content.variant()
    }

    pub fn timestamp(&self) -> Timestamp {
        self.content.timestamp
    }

    /// A transfer block whose secret nonce has not been revealed.
    pub fn is_withheld(&self) -> bool {
        self.variant() == Some(BlockVariant::Transfer) && self.content.secret_nonce.is_none()
    }

    /// `None` while the secret nonce is withheld.
    pub fn recompute_hash(&self) -> Option<Digest> {
        (!self.is_withheld()).then(|| self.content.hash())
    }

    pub fn signed_hash(&self) -> SignedHash {
        SignedHash {
            hash: self.hash,
            signature: self.seal.final_signature(),
        }
    }

    /// Copy of this block as sent before the reveal.
    pub fn without_secret(&self) -> Block {
        let mut b = self.clone();
        b.content.secret_nonce = None;
        b
    }

    /// Fills in a revealed nonce; true iff the hash now recomputes.
    pub fn reveal(&mut self, nonce: SecretNonce) -> bool {
        self.content.secret_nonce = Some(nonce);
        self.content.hash() == self.hash
    }

    pub fn repudiation_message(&self) -> Vec<u8> {
        repudiation_message(&self.hash, &self.seal.final_signature())
    }
}

/// Bytes the beneficiary signs to cancel a transfer: the transfer block's
/// hash and the sender's signature over it.
pub fn repudiation_message(hash: &Digest, sender_sig: &Signature) -> Vec<u8> {
    let mut m = Vec::with_capacity(REPUDIATION_TAG.len() + 96);
    m.extend_from_slice(REPUDIATION_TAG);
    m.extend_from_slice(&hash.0);
    m.extend_from_slice(&sender_sig.0);
    m
}

impl Canonical for Block {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.content.canonical_bytes())
            .field(&self.hash.0)
            .field(&self.seal.primary.0)
            .opt(self.seal.secondary.as_ref().map(|s| &s.0[..]))
            .opt(self.repudiation.as_ref().map(|s| &s.0[..]));
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let prev = SignedHash::from_bytes(dec.fixed()?);
        let timestamp = Timestamp(dec.u64()?);
        let holder_cert = dec.nested()?;
        let wallet_cert = dec.nested()?;
        let bank_cert = dec.nested()?;
        let child_value = dec.opt_u64()?.map(Amount::from_minor);
        let invoice_serial = dec.opt_u64()?;
        let mined_nonce = dec.opt_u64()?;
        let secret_nonce = dec.opt_fixed()?.map(SecretNonce);
        let content = BlockContent {
            prev,
            timestamp,
            holder_cert,
            wallet_cert,
            bank_cert,
            child_value,
            invoice_serial,
            mined_nonce,
            secret_nonce,
        };
        if content.variant().is_none() {
            return dec.invalid("block variant");
        }
        let hash = Digest(dec.fixed()?);
        let primary = Signature(dec.fixed()?);
        let secondary = dec.opt_fixed()?.map(Signature);
        let repudiation = dec.opt_fixed()?.map(Signature);
        Ok(Block {
            content,
            hash,
            seal: Seal { primary, secondary },
            repudiation,
        })
    }
}

impl Canonical for SignedHash {
    fn encode(&self, enc: &mut Encoder) {
        enc.field(&self.to_bytes());
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.fixed().map(SignedHash::from_bytes)
    }
}

impl Canonical for SecretNonce {
    fn encode(&self, enc: &mut Encoder) {
        enc.field(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.fixed().map(SecretNonce)
    }
}
