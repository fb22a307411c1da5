//! Signed messages of the offline payment handshake.
//!
//! Payee → payer: `Invoice`, then `Approval` or `Rejection`, then
//! `Confirmation` or `RepudiationDelivery`. Payer → payee: `ChainTransfer`,
//! then `SecretReveal`. Every message is signed by the sender's person key.

use alloc::vec::Vec;
use core::fmt;

use crate::amount::{Amount, Timestamp};
use crate::chain::{CoinChain, FailureCode, SecretNonce, SignedHash};
use crate::crypto::{self, Certificate, Digest, KeyPair, PublicKey, Signature};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

const MESSAGE_TAG: &[u8] = b"localcoin/message/v1";

/// Identifies one payment: the payee and the first invoice serial it reserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PaymentId {
    pub payee: PublicKey,
    pub base: u64,
}

impl fmt::Display for PaymentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}#{}",
            &alloc::format!("{}", self.payee)[..8],
            self.base
        )
    }
}

impl Canonical for PaymentId {
    fn encode(&self, enc: &mut Encoder) {
        enc.field(&self.payee.0).u64(self.base);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(PaymentId {
            payee: PublicKey(dec.fixed()?),
            base: dec.u64()?,
        })
    }
}

/// Payment request. Coin `i` of the payment must carry invoice serial
/// `base_invoice_serial + i`, for `i < coin_slots`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invoice {
    pub amount: Amount,
    pub beneficiary_cert: Certificate,
    pub beneficiary_wallet_cert: Certificate,
    pub bank_cert: Certificate,
    pub base_invoice_serial: u64,
    pub coin_slots: u64,
    pub timestamp: Timestamp,
}

impl Invoice {
    pub fn payment_id(&self) -> PaymentId {
        PaymentId {
            payee: self.beneficiary_cert.subject_vk,
            base: self.base_invoice_serial,
        }
    }
}

impl Canonical for Invoice {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.amount.minor())
            .nested(&self.beneficiary_cert)
            .nested(&self.beneficiary_wallet_cert)
            .nested(&self.bank_cert)
            .u64(self.base_invoice_serial)
            .u64(self.coin_slots)
            .u64(self.timestamp.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Invoice {
            amount: Amount::from_minor(dec.u64()?),
            beneficiary_cert: dec.nested()?,
            beneficiary_wallet_cert: dec.nested()?,
            bank_cert: dec.nested()?,
            base_invoice_serial: dec.u64()?,
            coin_slots: dec.u64()?,
            timestamp: Timestamp(dec.u64()?),
        })
    }
}

/// Chains offered for a payment; each ends in a transfer block whose secret
/// nonce is withheld.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferProposal {
    pub payment: PaymentId,
    pub chains: Vec<CoinChain>,
}

impl TransferProposal {
    pub fn total(&self) -> Option<Amount> {
        self.chains
            .iter()
            .try_fold(Amount::ZERO, |acc, c| acc.checked_add(c.value()))
    }
}

impl Canonical for TransferProposal {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.payment).list(&self.chains);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(TransferProposal {
            payment: dec.nested()?,
            chains: dec.list()?,
        })
    }
}

/// The payee accepts every offered transfer block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Approval {
    pub payment: PaymentId,
    pub tips: Vec<SignedHash>,
}

impl Canonical for Approval {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.payment).list(&self.tips);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Approval {
            payment: dec.nested()?,
            tips: dec.list()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// Invoice serial unknown, already consumed or already in use.
    Counter,
    /// The envelope signature does not verify.
    Signature,
    /// A transfer block does not name this wallet as beneficiary.
    Beneficiary,
    /// Offered value differs from the invoice amount, or too many coins.
    Amount,
    /// A coin is already held or pending in this wallet.
    Duplicate,
    /// A chain fails validation; the first failure code is carried.
    Chain(FailureCode),
}

impl RejectReason {
    /// Counter failures come from replays and carry no repudiation.
    pub fn is_counter(self) -> bool {
        self == RejectReason::Counter
    }

    fn tag(self) -> (u8, u8) {
        match self {
            RejectReason::Counter => (1, 0),
            RejectReason::Signature => (2, 0),
            RejectReason::Beneficiary => (3, 0),
            RejectReason::Amount => (4, 0),
            RejectReason::Duplicate => (5, 0),
            RejectReason::Chain(code) => (6, code as u8),
        }
    }

    fn from_tag(tag: u8, code: u8) -> Option<RejectReason> {
        const CODES: [FailureCode; 8] = [
            FailureCode::HashLink,
            FailureCode::Signature,
            FailureCode::Certificate,
            FailureCode::Variant,
            FailureCode::Value,
            FailureCode::Counter,
            FailureCode::Difficulty,
            FailureCode::Timestamp,
        ];
        match (tag, code) {
            (1, 0) => Some(RejectReason::Counter),
            (2, 0) => Some(RejectReason::Signature),
            (3, 0) => Some(RejectReason::Beneficiary),
            (4, 0) => Some(RejectReason::Amount),
            (5, 0) => Some(RejectReason::Duplicate),
            (6, c) => CODES.get(c as usize).map(|c| RejectReason::Chain(*c)),
            _ => None,
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Counter => f.write_str("counter"),
            RejectReason::Signature => f.write_str("signature"),
            RejectReason::Beneficiary => f.write_str("beneficiary"),
            RejectReason::Amount => f.write_str("amount"),
            RejectReason::Duplicate => f.write_str("duplicate"),
            RejectReason::Chain(code) => write!(f, "chain-{code}"),
        }
    }
}

/// The beneficiary's signature cancelling one transfer block, identified by
/// the block hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RepudiationEntry {
    pub hash: Digest,
    pub signature: Signature,
}

impl Canonical for RepudiationEntry {
    fn encode(&self, enc: &mut Encoder) {
        enc.field(&self.hash.0).field(&self.signature.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(RepudiationEntry {
            hash: Digest(dec.fixed()?),
            signature: Signature(dec.fixed()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub payment: PaymentId,
    pub reason: RejectReason,
    /// Empty for counter failures.
    pub repudiations: Vec<RepudiationEntry>,
}

impl Canonical for Rejection {
    fn encode(&self, enc: &mut Encoder) {
        let (tag, code) = self.reason.tag();
        enc.nested(&self.payment)
            .u8(tag)
            .u8(code)
            .list(&self.repudiations);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let payment = dec.nested()?;
        let (tag, code) = (dec.u8()?, dec.u8()?);
        let Some(reason) = RejectReason::from_tag(tag, code) else {
            return dec.invalid("reject reason");
        };
        Ok(Rejection {
            payment,
            reason,
            repudiations: dec.list()?,
        })
    }
}

/// Secret nonces, one per offered chain, in proposal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretReveal {
    pub payment: PaymentId,
    pub nonces: Vec<SecretNonce>,
}

impl Canonical for SecretReveal {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.payment).list(&self.nonces);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(SecretReveal {
            payment: dec.nested()?,
            nonces: dec.list()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepudiationDelivery {
    pub payment: PaymentId,
    pub repudiations: Vec<RepudiationEntry>,
}

impl Canonical for RepudiationDelivery {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.payment).list(&self.repudiations);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(RepudiationDelivery {
            payment: dec.nested()?,
            repudiations: dec.list()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confirmation {
    pub payment: PaymentId,
}

impl Canonical for Confirmation {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.payment);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Confirmation {
            payment: dec.nested()?,
        })
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Invoice(Invoice),
    ChainTransfer(TransferProposal),
    Approval(Approval),
    Rejection(Rejection),
    SecretReveal(SecretReveal),
    RepudiationDelivery(RepudiationDelivery),
    Confirmation(Confirmation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Invoice,
    ChainTransfer,
    Approval,
    Rejection,
    SecretReveal,
    RepudiationDelivery,
    Confirmation,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Invoice => "Invoice",
            MessageKind::ChainTransfer => "ChainTransfer",
            MessageKind::Approval => "Approval",
            MessageKind::Rejection => "Rejection",
            MessageKind::SecretReveal => "SecretReveal",
            MessageKind::RepudiationDelivery => "RepudiationDelivery",
            MessageKind::Confirmation => "Confirmation",
        }
    }

    pub fn class(self) -> MessageClass {
        match self {
            MessageKind::Invoice => MessageClass::Invoice,
            MessageKind::ChainTransfer => MessageClass::ChainTransfer,
            MessageKind::Approval | MessageKind::Rejection => MessageClass::Response,
            MessageKind::SecretReveal => MessageClass::SecretReveal,
            MessageKind::RepudiationDelivery | MessageKind::Confirmation => MessageClass::Outcome,
        }
    }

    fn tag(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The five steps of the handshake, as seen by a fault plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageClass {
    Invoice,
    ChainTransfer,
    /// Approval or Rejection.
    Response,
    SecretReveal,
    /// Confirmation or RepudiationDelivery.
    Outcome,
}

impl MessageClass {
    pub const ALL: [MessageClass; 5] = [
        MessageClass::Invoice,
        MessageClass::ChainTransfer,
        MessageClass::Response,
        MessageClass::SecretReveal,
        MessageClass::Outcome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageClass::Invoice => "Invoice",
            MessageClass::ChainTransfer => "ChainTransfer",
            MessageClass::Response => "Response",
            MessageClass::SecretReveal => "SecretReveal",
            MessageClass::Outcome => "Outcome",
        }
    }

    pub fn from_name(name: &str) -> Option<MessageClass> {
        MessageClass::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Invoice(_) => MessageKind::Invoice,
            Payload::ChainTransfer(_) => MessageKind::ChainTransfer,
            Payload::Approval(_) => MessageKind::Approval,
            Payload::Rejection(_) => MessageKind::Rejection,
            Payload::SecretReveal(_) => MessageKind::SecretReveal,
            Payload::RepudiationDelivery(_) => MessageKind::RepudiationDelivery,
            Payload::Confirmation(_) => MessageKind::Confirmation,
        }
    }

    pub fn payment(&self) -> PaymentId {
        match self {
            Payload::Invoice(p) => p.payment_id(),
            Payload::ChainTransfer(p) => p.payment,
            Payload::Approval(p) => p.payment,
            Payload::Rejection(p) => p.payment,
            Payload::SecretReveal(p) => p.payment,
            Payload::RepudiationDelivery(p) => p.payment,
            Payload::Confirmation(p) => p.payment,
        }
    }

    fn body(&self) -> Vec<u8> {
        match self {
            Payload::Invoice(p) => p.to_canonical_bytes(),
            Payload::ChainTransfer(p) => p.to_canonical_bytes(),
            Payload::Approval(p) => p.to_canonical_bytes(),
            Payload::Rejection(p) => p.to_canonical_bytes(),
            Payload::SecretReveal(p) => p.to_canonical_bytes(),
            Payload::RepudiationDelivery(p) => p.to_canonical_bytes(),
            Payload::Confirmation(p) => p.to_canonical_bytes(),
        }
    }

    fn signed_bytes(&self, sender: &PublicKey) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(MESSAGE_TAG)
            .u8(self.kind().tag())
            .field(&sender.0)
            .field(&self.body());
        enc.finish()
    }
}

/// A payload with its sender and the sender's signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub payload: Payload,
    pub sender_vk: PublicKey,
    pub signature: Signature,
}

impl Message {
    pub fn sign(payload: Payload, sender: &KeyPair) -> Message {
        let signature = sender.sign(&payload.signed_bytes(&sender.vk));
        Message {
            payload,
            sender_vk: sender.vk,
            signature,
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// True iff the signature verifies under the stated sender.
    pub fn verify(&self) -> bool {
        crypto::verify(
            &self.sender_vk,
            &self.payload.signed_bytes(&self.sender_vk),
            &self.signature,
        )
    }

    pub fn verify_from(&self, expected: &PublicKey) -> bool {
        self.sender_vk == *expected && self.verify()
    }
}

impl Canonical for Message {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.kind().tag())
            .field(&self.payload.body())
            .field(&self.sender_vk.0)
            .field(&self.signature.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let tag = dec.u8()?;
        let body = dec.field()?;
        let payload = match tag {
            1 => Payload::Invoice(Invoice::from_canonical_bytes(body)?),
            2 => Payload::ChainTransfer(TransferProposal::from_canonical_bytes(body)?),
            3 => Payload::Approval(Approval::from_canonical_bytes(body)?),
            4 => Payload::Rejection(Rejection::from_canonical_bytes(body)?),
            5 => Payload::SecretReveal(SecretReveal::from_canonical_bytes(body)?),
            6 => Payload::RepudiationDelivery(RepudiationDelivery::from_canonical_bytes(body)?),
            7 => Payload::Confirmation(Confirmation::from_canonical_bytes(body)?),
            _ => return dec.invalid("message kind"),
        };
        Ok(Message {
            payload,
            sender_vk: PublicKey(dec.fixed()?),
            signature: Signature(dec.fixed()?),
        })
    }
}
