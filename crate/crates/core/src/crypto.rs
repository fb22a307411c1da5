//! Signing, hashing and the central bank → bank → wallet/person chain of trust.
//!
//! The deployment fixes SHA-256 as the digest and Ed25519 (deterministic,
//! strict verification) as the signature scheme. Everything signed or hashed
//! goes through the canonical encoding in [`crate::encoding`].

use alloc::vec::Vec;
use core::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest as _, Sha256};

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

/// Public verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

/// A fixed-length signature value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub [u8; 64]);

/// 256-bit digest; rendered as 64 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

fn write_hex(f: &mut fmt::Formatter<'_>, bytes: &[u8]) -> fmt::Result {
    for b in bytes {
        write!(f, "{b:02x}")?;
    }
    Ok(())
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_hex(f, &self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PublicKey(")?;
        write_hex(f, &self.0[..8])?;
        f.write_str("..)")
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_hex(f, &self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Signature(")?;
        write_hex(f, &self.0[..8])?;
        f.write_str("..)")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_hex(f, &self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Digest(")?;
        write_hex(f, &self.0[..8])?;
        f.write_str("..)")
    }
}

impl Digest {
    /// Number of leading zero bits, the proof-of-work measure.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for byte in self.0 {
            if byte == 0 {
                bits += 8;
            } else {
                bits += byte.leading_zeros();
                break;
            }
        }
        bits
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        decode_hex::<32>(s).map(Digest)
    }
}

impl PublicKey {
    pub fn from_hex(s: &str) -> Option<PublicKey> {
        decode_hex::<32>(s).map(PublicKey)
    }
}

fn decode_hex<const N: usize>(s: &str) -> Option<[u8; N]> {
    let s = s.as_bytes();
    if s.len() != N * 2 {
        return None;
    }
    let nibble = |c: u8| match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        _ => None,
    };
    let mut out = [0u8; N];
    for (i, pair) in s.chunks_exact(2).enumerate() {
        out[i] = nibble(pair[0])? << 4 | nibble(pair[1])?;
    }
    Some(out)
}

/// Private signing key. Never serialized in clear; see wallet snapshots.
#[derive(Clone)]
pub struct SecretKey(SigningKey);

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub(crate) fn seed(&self) -> [u8; 32] {
        self.0.to_bytes()
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub vk: PublicKey,
    pub sk: SecretKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&seed);
        KeyPair {
            vk: PublicKey(signing.verifying_key().to_bytes()),
            sk: SecretKey(signing),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.vk
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.sk, message)
    }
}

/// Deterministic key generation; equal seeds give equal pairs.
pub fn generate_keypair(seed: [u8; 32]) -> KeyPair {
    KeyPair::from_seed(seed)
}

/// Seed derived from a human-readable label, for reproducible actors.
pub fn seed_from_label(label: &str) -> [u8; 32] {
    digest(label.as_bytes()).0
}

pub fn sign(sk: &SecretKey, message: &[u8]) -> Signature {
    Signature(sk.0.sign(message).to_bytes())
}

/// Strict Ed25519 verification. Malformed keys or signatures yield `false`.
pub fn verify(vk: &PublicKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&vk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    key.verify_strict(message, &sig).is_ok()
}

pub fn digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Digest of several byte strings fed in sequence.
pub fn digest_parts(parts: &[&[u8]]) -> Digest {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    Digest(hasher.finalize().into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Bank,
    Wallet,
    Person,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Bank => 1,
            Role::Wallet => 2,
            Role::Person => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Role> {
        match tag {
            1 => Some(Role::Bank),
            2 => Some(Role::Wallet),
            3 => Some(Role::Person),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Bank => "bank",
            Role::Wallet => "wallet",
            Role::Person => "person",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertificateError {
    #[error("{} certificate requires a linked key", .0.name())]
    MissingLink(Role),
}

/// A key certified by an issuer. Wallet and person certificates cross-link
/// to each other's key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject_vk: PublicKey,
    pub linked_vk: Option<PublicKey>,
    pub role: Role,
    pub issuer_vk: PublicKey,
    pub issuer_sig: Signature,
}

impl Certificate {
    /// Canonical bytes of the fields covered by `issuer_sig`.
    pub fn signed_bytes(&self) -> Vec<u8> {
        signed_cert_bytes(
            &self.subject_vk,
            self.linked_vk.as_ref(),
            self.role,
            &self.issuer_vk,
        )
    }

    pub fn verify_signature(&self) -> bool {
        verify(&self.issuer_vk, &self.signed_bytes(), &self.issuer_sig)
    }
}

fn signed_cert_bytes(
    subject: &PublicKey,
    linked: Option<&PublicKey>,
    role: Role,
    issuer: &PublicKey,
) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.field(&subject.0)
        .opt(linked.map(|k| &k.0[..]))
        .u8(role.tag())
        .field(&issuer.0);
    enc.finish()
}

macro_rules! canonical_bytes {
    ($($ty:ident),*) => {$(
        impl Canonical for $ty {
            fn encode(&self, enc: &mut Encoder) {
                enc.field(&self.0);
            }

            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                dec.fixed().map($ty)
            }
        }
    )*};
}

canonical_bytes!(PublicKey, Signature, Digest);

impl Canonical for Certificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.signed_bytes()).field(&self.issuer_sig.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let subject_vk = PublicKey(dec.fixed()?);
        let linked_vk = dec.opt_fixed()?.map(PublicKey);
        let role = match Role::from_tag(dec.u8()?) {
            Some(r) => r,
            None => return dec.invalid("certificate role"),
        };
        let issuer_vk = PublicKey(dec.fixed()?);
        let issuer_sig = Signature(dec.fixed()?);
        Ok(Certificate {
            subject_vk,
            linked_vk,
            role,
            issuer_vk,
            issuer_sig,
        })
    }
}

pub fn issue_certificate(
    issuer: &KeyPair,
    subject_vk: PublicKey,
    linked_vk: Option<PublicKey>,
    role: Role,
) -> Result<Certificate, CertificateError> {
    if matches!(role, Role::Wallet | Role::Person) && linked_vk.is_none() {
        return Err(CertificateError::MissingLink(role));
    }
    let bytes = signed_cert_bytes(&subject_vk, linked_vk.as_ref(), role, &issuer.vk);
    Ok(Certificate {
        subject_vk,
        linked_vk,
        role,
        issuer_vk: issuer.vk,
        issuer_sig: issuer.sign(&bytes),
    })
}

/// Current and historical central bank keys. The current key is the last one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustStore {
    keys: Vec<PublicKey>,
}

impl TrustStore {
    pub fn new(current: PublicKey) -> Self {
        TrustStore {
            keys: alloc::vec![current],
        }
    }

    /// Builds a store from keys ordered oldest first. Empty input is refused.
    pub fn from_history(keys: Vec<PublicKey>) -> Option<Self> {
        (!keys.is_empty()).then_some(TrustStore { keys })
    }

    pub fn current(&self) -> PublicKey {
        *self.keys.last().expect("trust store is never empty")
    }

    pub fn history(&self) -> &[PublicKey] {
        &self.keys
    }

    /// Installs a new current key; the old one stays trusted for old serials.
    pub fn rotate(&mut self, next: PublicKey) {
        if self.current() != next {
            self.keys.retain(|k| *k != next);
            self.keys.push(next);
        }
    }

    pub fn trusts(&self, key: &PublicKey) -> bool {
        self.keys.contains(key)
    }
}

impl Canonical for TrustStore {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.keys.len() as u64);
        for k in &self.keys {
            enc.field(&k.0);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let n = dec.u64()?;
        if n == 0 || n > 4096 {
            return dec.invalid("trust store size");
        }
        let keys = (0..n)
            .map(|_| dec.fixed().map(PublicKey))
            .collect::<Result<_, _>>()?;
        Ok(TrustStore { keys })
    }
}

/// Checks a certificate path ending at a trusted central bank key.
///
/// Without `issuer_cert`, `cert` must be issued directly by a trusted central
/// key. With it, `issuer_cert` must be a bank certificate issued by a trusted
/// central key and `cert` a wallet/person certificate issued by that bank.
pub fn verify_certificate_path(
    cert: &Certificate,
    issuer_cert: Option<&Certificate>,
    trust: &TrustStore,
) -> bool {
    match issuer_cert {
        None => trust.trusts(&cert.issuer_vk) && cert.verify_signature(),
        Some(bank) => {
            bank.role == Role::Bank
                && cert.role != Role::Bank
                && cert.issuer_vk == bank.subject_vk
                && verify_certificate_path(bank, None, trust)
                && cert.verify_signature()
        }
    }
}

/// Checks a person/wallet certificate pair under a bank certificate,
/// including the mutual cross-link.
pub fn verify_holder_certificates(
    person: &Certificate,
    wallet: &Certificate,
    bank: &Certificate,
    trust: &TrustStore,
) -> bool {
    person.role == Role::Person
        && wallet.role == Role::Wallet
        && person.linked_vk == Some(wallet.subject_vk)
        && wallet.linked_vk == Some(person.subject_vk)
        && verify_certificate_path(person, Some(bank), trust)
        && verify_certificate_path(wallet, Some(bank), trust)
}
