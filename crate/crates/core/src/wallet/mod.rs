//! The sealed offline wallet.
//!
//! Keys, the replay-protected invoice counter and the coin store are only
//! reachable through [`Wallet`]'s operations. The one deliberate exception is
//! [`Wallet::clone_storage`], the adversary hook for a physically extracted
//! device.

mod repudiation;
mod snapshot;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub use repudiation::{
    export_repudiation_string, import_repudiation_string, RepudiationStringError,
};
pub use snapshot::SnapshotError;

use crate::amount::{Amount, Timestamp};
use crate::chain::{
    current_holder, pow, schedule_status, validate_chain, Block, BlockContent, BlockVariant,
    ChainError, CoinChain, CoinId, FailureCode, HolderCredentials, HolderStatus, MiningPolicy,
    Party, SecretNonce, SignedHash,
};
use crate::crypto::{self, Certificate, KeyPair, PublicKey, Signature, TrustStore};
use crate::institutions::{burn_message, Bank, Challenge, InstitutionError, Manufacturer};
use crate::protocol::{
    Approval, Confirmation, Invoice, Message, Payload, PaymentId, RejectReason, Rejection,
    RepudiationDelivery, RepudiationEntry, SecretReveal, TransferProposal,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WalletError {
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("an invoice needs at least one coin slot")]
    NoSlots,
    #[error("invoice counter would overflow")]
    CounterOverflow,
    #[error("unexpected message kind")]
    WrongKind,
    #[error("message signature or sender does not verify")]
    WrongParty,
    #[error("beneficiary certificates do not verify")]
    Certificate,
    #[error("payment {0} already handled")]
    DuplicatePayment(PaymentId),
    #[error("insufficient funds: {available} spendable, {requested} requested")]
    InsufficientFunds {
        available: Amount,
        requested: Amount,
    },
    #[error("exact change needs fractioning, which is limited to cold coins")]
    HotCoinFork,
    #[error("payment needs more coins than the invoice allows")]
    TooManyCoins,
    #[error("unknown payment")]
    UnknownPayment,
    #[error("payment is not awaiting this message")]
    NotPending,
    #[error("approval does not cover the offered transfer blocks")]
    ApprovalMismatch,
    #[error("unknown coin")]
    UnknownCoin,
    #[error("operation not allowed for the coin's status")]
    BadStatus,
    #[error("no transfer block matches the repudiation")]
    UnknownTransfer,
    #[error("repudiation signature does not verify under the beneficiary")]
    RepudiationSignature,
    #[error("coin is not held by this wallet")]
    NotHolder,
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Institution(#[from] InstitutionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CoinStatus {
    Owned,
    /// A transfer block is escrowed with its secret nonce.
    PendingOutgoing,
    /// The transfer is complete; the chain waits to be uploaded.
    TransferredAwaitingUpload,
    /// Received with the secret withheld; a standby repudiation is held.
    PendingIncoming,
    /// A disputed transfer; upload is blocked until a repudiation arrives.
    ErrorFlagged,
    /// Mining fell behind beyond the backlog limit; only collectible.
    Slow,
}

impl CoinStatus {
    pub fn name(self) -> &'static str {
        match self {
            CoinStatus::Owned => "owned",
            CoinStatus::PendingOutgoing => "pending_outgoing",
            CoinStatus::TransferredAwaitingUpload => "transferred_awaiting_upload",
            CoinStatus::PendingIncoming => "pending_incoming",
            CoinStatus::ErrorFlagged => "error_flagged",
            CoinStatus::Slow => "slow",
        }
    }
}

/// Invariants: `escrow` is present iff the status is `PendingOutgoing`;
/// `standby` is present iff the status is `PendingIncoming`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinRecord {
    pub chain: CoinChain,
    pub status: CoinStatus,
    escrow: Option<Block>,
    standby: Option<RepudiationEntry>,
}

impl CoinRecord {
    fn owned(chain: CoinChain) -> Self {
        CoinRecord {
            chain,
            status: CoinStatus::Owned,
            escrow: None,
            standby: None,
        }
    }

    pub fn has_escrow(&self) -> bool {
        self.escrow.is_some()
    }

    pub fn standby_repudiation(&self) -> Option<&RepudiationEntry> {
        self.standby.as_ref()
    }

    pub fn value(&self) -> Amount {
        self.chain.value()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Reservation {
    amount: Amount,
    slots: u64,
    open: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutgoingState {
    Proposed,
    Revealed,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Outgoing {
    invoice: Invoice,
    coins: Vec<CoinId>,
    state: OutgoingState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Incoming {
    sender: PublicKey,
    coins: Vec<CoinId>,
    tips: Vec<SignedHash>,
    /// Records displaced by the incoming coins, restored on repudiation.
    replaced: Vec<(CoinId, CoinRecord)>,
}

/// Result of [`Wallet::finalize_receive`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiveOutcome {
    /// Every nonce matched; carries the signed `Confirmation`.
    Accepted(Message),
    /// A nonce failed; carries the signed `RepudiationDelivery`.
    Repudiated(Message),
}

/// A wallet's hardware key with its manufacturer attestation.
#[derive(Clone)]
pub struct HardwareKey {
    keys: KeyPair,
    attestation: Signature,
}

impl HardwareKey {
    pub fn manufacture(oem: &Manufacturer, seed: [u8; 32]) -> Self {
        let keys = KeyPair::from_seed(seed);
        let attestation = oem.attest(&keys.vk);
        HardwareKey { keys, attestation }
    }

    /// A key whose attestation comes from an arbitrary signer.
    pub fn with_attestation(seed: [u8; 32], attestation: Signature) -> Self {
        HardwareKey {
            keys: KeyPair::from_seed(seed),
            attestation,
        }
    }

    pub fn vk(&self) -> PublicKey {
        self.keys.vk
    }
}

pub struct Wallet {
    hardware: HardwareKey,
    person: KeyPair,
    wallet_cert: Certificate,
    person_cert: Certificate,
    bank_cert: Certificate,
    trust: TrustStore,
    mining: Option<MiningPolicy>,
    rpmb_counter: u64,
    reservations: BTreeMap<u64, Reservation>,
    consumed: BTreeSet<u64>,
    coins: BTreeMap<CoinId, CoinRecord>,
    outgoing: BTreeMap<PaymentId, Outgoing>,
    incoming: BTreeMap<PaymentId, Incoming>,
    released: Vec<RepudiationEntry>,
    accepted: BTreeSet<SignedHash>,
    repudiated: BTreeSet<SignedHash>,
    rng_seed: [u8; 32],
    rng: ChaCha20Rng,
    clock: Timestamp,
}

impl Wallet {
    /// Authenticates the wallet and its owner at `bank`, which certifies
    /// both keys with mutual cross-links. The invoice counter starts at 0.
    pub fn provision(
        hardware: HardwareKey,
        person: KeyPair,
        bank: &Bank,
        trust: TrustStore,
        rng_seed: [u8; 32],
    ) -> Result<Wallet, WalletError> {
        let (wallet_cert, person_cert) =
            bank.certify_holder(hardware.vk(), &hardware.attestation, person.vk)?;
        Ok(Wallet {
            hardware,
            person,
            wallet_cert,
            person_cert,
            bank_cert: bank.cert().clone(),
            trust,
            mining: None,
            rpmb_counter: 0,
            reservations: BTreeMap::new(),
            consumed: BTreeSet::new(),
            coins: BTreeMap::new(),
            outgoing: BTreeMap::new(),
            incoming: BTreeMap::new(),
            released: Vec::new(),
            accepted: BTreeSet::new(),
            repudiated: BTreeSet::new(),
            rng_seed,
            rng: ChaCha20Rng::from_seed(rng_seed),
            clock: Timestamp(0),
        })
    }

    /// Binds a new person key to this wallet; the counter and coin store
    /// are kept.
    pub fn reprovision(&mut self, person: KeyPair, bank: &Bank) -> Result<(), WalletError> {
        let (wallet_cert, person_cert) =
            bank.certify_holder(self.hardware.vk(), &self.hardware.attestation, person.vk)?;
        self.person = person;
        self.wallet_cert = wallet_cert;
        self.person_cert = person_cert;
        self.bank_cert = bank.cert().clone();
        Ok(())
    }

    pub fn set_mining_policy(&mut self, policy: Option<MiningPolicy>) {
        self.mining = policy;
    }

    /// Full copy of the sealed storage, keys included: what an attacker who
    /// broke the secure element would obtain.
    pub fn clone_storage(&self) -> Wallet {
        Wallet {
            hardware: self.hardware.clone(),
            person: self.person.clone(),
            wallet_cert: self.wallet_cert.clone(),
            person_cert: self.person_cert.clone(),
            bank_cert: self.bank_cert.clone(),
            trust: self.trust.clone(),
            mining: self.mining.clone(),
            rpmb_counter: self.rpmb_counter,
            reservations: self.reservations.clone(),
            consumed: self.consumed.clone(),
            coins: self.coins.clone(),
            outgoing: self.outgoing.clone(),
            incoming: self.incoming.clone(),
            released: self.released.clone(),
            accepted: self.accepted.clone(),
            repudiated: self.repudiated.clone(),
            rng_seed: self.rng_seed,
            rng: self.rng.clone(),
            clock: self.clock,
        }
    }

    pub fn person_vk(&self) -> PublicKey {
        self.person.vk
    }

    pub fn wallet_vk(&self) -> PublicKey {
        self.hardware.vk()
    }

    pub fn party(&self) -> Party {
        Party {
            person: self.person.vk,
            wallet: self.hardware.vk(),
        }
    }

    pub fn person_cert(&self) -> &Certificate {
        &self.person_cert
    }

    pub fn wallet_cert(&self) -> &Certificate {
        &self.wallet_cert
    }

    pub fn bank_cert(&self) -> &Certificate {
        &self.bank_cert
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    pub fn rpmb_counter(&self) -> u64 {
        self.rpmb_counter
    }

    pub fn consumed_invoices(&self) -> &BTreeSet<u64> {
        &self.consumed
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn coins(&self) -> &BTreeMap<CoinId, CoinRecord> {
        &self.coins
    }

    pub fn coin(&self, id: &CoinId) -> Option<&CoinRecord> {
        self.coins.get(id)
    }

    pub fn value_with_status(&self, status: CoinStatus) -> Amount {
        self.coins
            .values()
            .filter(|c| c.status == status)
            .map(CoinRecord::value)
            .sum()
    }

    pub fn owned_value(&self) -> Amount {
        self.value_with_status(CoinStatus::Owned)
    }

    /// Repudiations this wallet has issued, exportable as strings.
    pub fn released_repudiations(&self) -> &[RepudiationEntry] {
        &self.released
    }

    fn tick(&mut self, now: Timestamp) {
        self.clock = self.clock.max(now);
    }

    fn credentials(&self) -> HolderCredentials<'_> {
        HolderCredentials {
            wallet: &self.hardware.keys,
            person: &self.person,
            wallet_cert: &self.wallet_cert,
            person_cert: &self.person_cert,
            bank_cert: &self.bank_cert,
        }
    }

    fn sign_message(&self, payload: Payload) -> Message {
        Message::sign(payload, &self.person)
    }

    fn fresh_nonce(&mut self) -> SecretNonce {
        let mut n = [0u8; 16];
        self.rng.fill_bytes(&mut n);
        SecretNonce(n)
    }

    /// Stores a coin delivered by the bank or otherwise held by this wallet.
    pub fn receive_coin(
        &mut self,
        chain: CoinChain,
        now: Timestamp,
    ) -> Result<CoinId, WalletError> {
        self.tick(now);
        let report = validate_chain(&chain, &self.trust, self.mining.as_ref(), self.clock);
        if !report.valid() {
            return Err(WalletError::Chain(ChainError::BrokenLink));
        }
        let view = current_holder(&chain)?;
        if view.holder.person() != Some(self.person.vk)
            || matches!(view.status, HolderStatus::AwaitingReveal { .. })
        {
            return Err(WalletError::NotHolder);
        }
        let id = chain.coin_id();
        if self.coins.contains_key(&id) {
            return Err(WalletError::BadStatus);
        }
        self.coins.insert(id.clone(), CoinRecord::owned(chain));
        Ok(id)
    }

    /// Reserves `max_coins` invoice serials starting at the current counter
    /// and returns the signed invoice.
    pub fn create_invoice(
        &mut self,
        amount: Amount,
        max_coins: u64,
        now: Timestamp,
    ) -> Result<Message, WalletError> {
        if amount.is_zero() {
            return Err(WalletError::NonPositiveAmount);
        }
        if max_coins == 0 {
            return Err(WalletError::NoSlots);
        }
        let base = self.rpmb_counter;
        self.rpmb_counter = base
            .checked_add(max_coins)
            .ok_or(WalletError::CounterOverflow)?;
        self.tick(now);
        self.reservations.insert(
            base,
            Reservation {
                amount,
                slots: max_coins,
                open: true,
            },
        );
        let invoice = Invoice {
            amount,
            beneficiary_cert: self.person_cert.clone(),
            beneficiary_wallet_cert: self.wallet_cert.clone(),
            bank_cert: self.bank_cert.clone(),
            base_invoice_serial: base,
            coin_slots: max_coins,
            timestamp: self.clock,
        };
        Ok(self.sign_message(Payload::Invoice(invoice)))
    }

    /// Closes an invoice that received no proposal. Later proposals for it
    /// fail the counter check.
    pub fn cancel_invoice(&mut self, base: u64) -> bool {
        let in_use = self.incoming.keys().any(|p| p.base == base);
        match self.reservations.get_mut(&base) {
            Some(r) if r.open && !in_use => {
                r.open = false;
                true
            }
            _ => false,
        }
    }

    /// Marks owned dynamic coins whose mining fell too far behind as slow.
    pub fn refresh_schedule(&mut self, now: Timestamp) {
        self.tick(now);
        let Some(policy) = &self.mining else { return };
        for rec in self.coins.values_mut() {
            if rec.status == CoinStatus::Owned
                && schedule_status(&rec.chain, policy, self.clock).is_slow()
            {
                rec.status = CoinStatus::Slow;
            }
        }
    }

    fn spendable(&self) -> Vec<(CoinId, Amount, bool)> {
        let mut out: Vec<_> = self
            .coins
            .iter()
            .filter(|(_, r)| r.status == CoinStatus::Owned)
            .filter(|(_, r)| {
                r.chain
                    .kind()
                    .expiration()
                    .is_none_or(|exp| self.clock <= exp)
            })
            .map(|(id, r)| (id.clone(), r.value(), r.chain.kind().is_hot()))
            .collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Largest-first selection, forking one cold coin when exact change is
    /// needed. Returns the coins to pay with, in payment order.
    fn select_coins(&mut self, amount: Amount, slots: u64) -> Result<Vec<CoinId>, WalletError> {
        let coins = self.spendable();
        let available: Amount = coins.iter().map(|c| c.1).sum();
        if available < amount {
            return Err(WalletError::InsufficientFunds {
                available,
                requested: amount,
            });
        }
        let mut chosen = Vec::new();
        let mut remaining = amount;
        for (id, value, _) in &coins {
            if remaining.is_zero() || chosen.len() as u64 == slots {
                break;
            }
            if *value <= remaining {
                chosen.push(id.clone());
                remaining = remaining.saturating_sub(*value);
            }
        }
        if remaining.is_zero() {
            return Ok(chosen);
        }
        if chosen.len() as u64 == slots {
            return Err(WalletError::TooManyCoins);
        }
        // Smallest unselected coin that covers the remainder.
        let candidates: Vec<_> = coins
            .iter()
            .filter(|(id, value, _)| *value > remaining && !chosen.contains(id))
            .collect();
        let Some((id, value, _)) = candidates.iter().rev().find(|(_, _, hot)| !hot) else {
            return Err(if candidates.is_empty() {
                WalletError::TooManyCoins
            } else {
                WalletError::HotCoinFork
            });
        };
        let record = self.coins.remove(id).expect("selected coin exists");
        let change = value.saturating_sub(remaining);
        let (pay, keep) =
            match record
                .chain
                .fork(remaining, change, &self.credentials(), self.clock)
            {
                Ok(children) => children,
                Err(e) => {
                    self.coins.insert(id.clone(), record);
                    return Err(e.into());
                }
            };
        let pay_id = pay.coin_id();
        self.coins.insert(pay_id.clone(), CoinRecord::owned(pay));
        self.coins.insert(keep.coin_id(), CoinRecord::owned(keep));
        chosen.push(pay_id);
        Ok(chosen)
    }

    fn build_transfer(&mut self, id: &CoinId, invoice: &Invoice, serial: u64) -> Block {
        let nonce = self.fresh_nonce();
        let rec = &self.coins[id];
        let mut content = BlockContent {
            prev: rec.chain.tip_link(),
            timestamp: self.clock.max(rec.chain.tip_timestamp()),
            holder_cert: invoice.beneficiary_cert.clone(),
            wallet_cert: invoice.beneficiary_wallet_cert.clone(),
            bank_cert: invoice.bank_cert.clone(),
            child_value: None,
            invoice_serial: Some(serial),
            mined_nonce: None,
            secret_nonce: Some(nonce),
        };
        let hash = match &self.mining {
            Some(policy) => content.mine(policy.bits_for(rec.chain.value())),
            None => content.hash(),
        };
        content.seal_by_holder_with_hash(hash, &self.hardware.keys, &self.person)
    }

    /// Answers an invoice with a proposal: one transfer block per paying
    /// coin, each hashed with a fresh secret nonce that stays in escrow.
    pub fn prepare_payment(
        &mut self,
        invoice_msg: &Message,
        now: Timestamp,
    ) -> Result<Message, WalletError> {
        let Payload::Invoice(invoice) = &invoice_msg.payload else {
            return Err(WalletError::WrongKind);
        };
        if !invoice_msg.verify_from(&invoice.beneficiary_cert.subject_vk) {
            return Err(WalletError::WrongParty);
        }
        if !crypto::verify_holder_certificates(
            &invoice.beneficiary_cert,
            &invoice.beneficiary_wallet_cert,
            &invoice.bank_cert,
            &self.trust,
        ) {
            return Err(WalletError::Certificate);
        }
        if invoice.amount.is_zero() {
            return Err(WalletError::NonPositiveAmount);
        }
        if invoice.coin_slots == 0 {
            return Err(WalletError::NoSlots);
        }
        let payment = invoice.payment_id();
        if self.outgoing.contains_key(&payment) {
            return Err(WalletError::DuplicatePayment(payment));
        }
        self.refresh_schedule(now);
        let chosen = self.select_coins(invoice.amount, invoice.coin_slots)?;
        let mut chains = Vec::with_capacity(chosen.len());
        for (i, id) in chosen.iter().enumerate() {
            let block = self.build_transfer(id, invoice, invoice.base_invoice_serial + i as u64);
            let rec = self.coins.get_mut(id).expect("chosen coin exists");
            chains.push(rec.chain.append_block(block.without_secret())?);
            rec.status = CoinStatus::PendingOutgoing;
            rec.escrow = Some(block);
        }
        self.outgoing.insert(
            payment,
            Outgoing {
                invoice: invoice.clone(),
                coins: chosen,
                state: OutgoingState::Proposed,
            },
        );
        Ok(self.sign_message(Payload::ChainTransfer(TransferProposal { payment, chains })))
    }

    fn reject(
        &self,
        payment: PaymentId,
        reason: RejectReason,
        repudiations: Vec<RepudiationEntry>,
    ) -> Message {
        self.sign_message(Payload::Rejection(Rejection {
            payment,
            reason,
            repudiations,
        }))
    }

    fn repudiation_for(&self, block: &Block) -> RepudiationEntry {
        RepudiationEntry {
            hash: block.hash,
            signature: self.person.sign(&block.repudiation_message()),
        }
    }

    /// Checks serials that replays would reuse. Failures here carry no
    /// repudiation.
    fn counter_check(&self, msg: &Message) -> Option<RejectReason> {
        let Payload::ChainTransfer(p) = &msg.payload else {
            return Some(RejectReason::Counter);
        };
        let open = self
            .reservations
            .get(&p.payment.base)
            .is_some_and(|r| r.open && p.payment.payee == self.person.vk);
        if !open || self.incoming.contains_key(&p.payment) {
            return Some(RejectReason::Counter);
        }
        for (i, chain) in p.chains.iter().enumerate() {
            let Some(tip) = chain.tip() else { continue };
            let serial = tip.content.invoice_serial;
            if serial.is_some_and(|s| self.consumed.contains(&s))
                || self.accepted.contains(&tip.signed_hash())
                || self.repudiated.contains(&tip.signed_hash())
                || (serial.is_some() && serial != Some(p.payment.base + i as u64))
            {
                return Some(RejectReason::Counter);
            }
        }
        None
    }

    fn evaluate(
        &self,
        msg: &Message,
        p: &TransferProposal,
        now: Timestamp,
    ) -> Option<RejectReason> {
        let reservation = &self.reservations[&p.payment.base];
        if p.chains.is_empty() || p.chains.len() as u64 > reservation.slots {
            return Some(RejectReason::Amount);
        }
        for chain in &p.chains {
            let Some(tip) = chain.tip().filter(|t| t.is_withheld()) else {
                return Some(RejectReason::Chain(FailureCode::Variant));
            };
            let report = validate_chain(chain, &self.trust, self.mining.as_ref(), now);
            if let Some(f) = report.failures.first() {
                return Some(RejectReason::Chain(f.code));
            }
            if tip.content.party() != self.party() {
                return Some(RejectReason::Beneficiary);
            }
            match current_holder(chain) {
                Ok(view) if view.holder.person() == Some(msg.sender_vk) => {}
                _ => return Some(RejectReason::Signature),
            }
        }
        if !msg.verify() {
            return Some(RejectReason::Signature);
        }
        if p.total() != Some(reservation.amount) {
            return Some(RejectReason::Amount);
        }
        let mut ids = BTreeSet::new();
        for chain in &p.chains {
            let id = chain.coin_id();
            let clash = match self.coins.get(&id) {
                None => false,
                Some(r) => {
                    r.status != CoinStatus::TransferredAwaitingUpload
                        || !r.chain.is_prefix_of(chain)
                }
            };
            if clash || !ids.insert(id) {
                return Some(RejectReason::Duplicate);
            }
        }
        None
    }

    /// Evaluates a proposal. On success every coin is stored pending with a
    /// standby repudiation and a signed approval is returned; any failure
    /// rejects the whole payment.
    pub fn receive_proposal(
        &mut self,
        msg: &Message,
        now: Timestamp,
    ) -> Result<Message, WalletError> {
        let Payload::ChainTransfer(p) = &msg.payload else {
            return Err(WalletError::WrongKind);
        };
        self.tick(now);
        if let Some(reason) = self.counter_check(msg) {
            return Ok(self.reject(p.payment, reason, Vec::new()));
        }
        if let Some(reason) = self.evaluate(msg, p, self.clock) {
            let mut reps = Vec::new();
            for tip in p.chains.iter().filter_map(CoinChain::tip) {
                if tip.is_withheld()
                    && tip.content.party() == self.party()
                    && !self.accepted.contains(&tip.signed_hash())
                {
                    let entry = self.repudiation_for(tip);
                    self.repudiated.insert(tip.signed_hash());
                    self.released.push(entry);
                    reps.push(entry);
                }
            }
            if let Some(r) = self.reservations.get_mut(&p.payment.base) {
                r.open = false;
            }
            return Ok(self.reject(p.payment, reason, reps));
        }
        let mut incoming = Incoming {
            sender: msg.sender_vk,
            coins: Vec::new(),
            tips: Vec::new(),
            replaced: Vec::new(),
        };
        for chain in &p.chains {
            let tip = chain.tip().expect("evaluated");
            let entry = self.repudiation_for(tip);
            let id = chain.coin_id();
            if let Some(old) = self.coins.remove(&id) {
                incoming.replaced.push((id.clone(), old));
            }
            self.coins.insert(
                id.clone(),
                CoinRecord {
                    chain: chain.clone(),
                    status: CoinStatus::PendingIncoming,
                    escrow: None,
                    standby: Some(entry),
                },
            );
            incoming.coins.push(id);
            incoming.tips.push(tip.signed_hash());
        }
        let tips = incoming.tips.clone();
        self.incoming.insert(p.payment, incoming);
        Ok(self.sign_message(Payload::Approval(Approval {
            payment: p.payment,
            tips,
        })))
    }

    fn escrowed_tips(&self, out: &Outgoing) -> Vec<SignedHash> {
        out.coins
            .iter()
            .filter_map(|id| self.coins.get(id)?.escrow.as_ref().map(Block::signed_hash))
            .collect()
    }

    /// On a verified approval covering every escrowed block, appends the
    /// transfer blocks permanently and returns the signed secret reveal.
    pub fn reveal_secret(&mut self, approval: &Message) -> Result<Message, WalletError> {
        let Payload::Approval(a) = &approval.payload else {
            return Err(WalletError::WrongKind);
        };
        let out = self
            .outgoing
            .get(&a.payment)
            .ok_or(WalletError::UnknownPayment)?;
        if out.state != OutgoingState::Proposed {
            return Err(WalletError::NotPending);
        }
        if !approval.verify_from(&out.invoice.beneficiary_cert.subject_vk) {
            return Err(WalletError::WrongParty);
        }
        if a.tips != self.escrowed_tips(out) || a.tips.len() != out.coins.len() {
            return Err(WalletError::ApprovalMismatch);
        }
        let ids = out.coins.clone();
        let mut nonces = Vec::with_capacity(ids.len());
        for id in &ids {
            let rec = self.coins.get_mut(id).expect("escrowed coin");
            let block = rec.escrow.take().expect("escrow present");
            nonces.push(
                block
                    .content
                    .secret_nonce
                    .expect("escrowed block keeps its nonce"),
            );
            rec.chain = rec.chain.append_block(block)?;
            rec.status = CoinStatus::TransferredAwaitingUpload;
        }
        self.outgoing.get_mut(&a.payment).expect("present").state = OutgoingState::Revealed;
        Ok(self.sign_message(Payload::SecretReveal(SecretReveal {
            payment: a.payment,
            nonces,
        })))
    }

    /// Drops the escrowed blocks of a payment that was never approved.
    fn burn_escrow(&mut self, payment: &PaymentId) {
        let Some(out) = self.outgoing.get_mut(payment) else {
            return;
        };
        if out.state != OutgoingState::Proposed {
            return;
        }
        out.state = OutgoingState::Closed;
        for id in out.coins.clone() {
            if let Some(rec) = self.coins.get_mut(&id) {
                if rec.escrow.take().is_some() {
                    rec.status = CoinStatus::Owned;
                }
            }
        }
    }

    /// Handles a verified rejection: repudiated blocks are appended with
    /// their repudiation, the rest are burned. Returns the number of
    /// repudiations applied.
    pub fn handle_rejection(&mut self, msg: &Message) -> Result<usize, WalletError> {
        let Payload::Rejection(r) = &msg.payload else {
            return Err(WalletError::WrongKind);
        };
        let out = self
            .outgoing
            .get(&r.payment)
            .ok_or(WalletError::UnknownPayment)?;
        if out.state != OutgoingState::Proposed {
            return Err(WalletError::NotPending);
        }
        if !msg.verify_from(&out.invoice.beneficiary_cert.subject_vk) {
            return Err(WalletError::WrongParty);
        }
        let applied = r
            .repudiations
            .iter()
            .filter(|e| self.apply_repudiation(e).is_ok())
            .count();
        self.burn_escrow(&r.payment);
        Ok(applied)
    }

    /// Timeout on the sending side. Unapproved transfer blocks are burned;
    /// a revealed payment is left as is.
    pub fn expire_outgoing(&mut self, payment: &PaymentId) {
        self.burn_escrow(payment);
        if let Some(out) = self.outgoing.get_mut(payment) {
            out.state = OutgoingState::Closed;
        }
    }

    /// Marks a revealed payment as confirmed by the receiver.
    pub fn confirm_outgoing(&mut self, msg: &Message) -> Result<(), WalletError> {
        let Payload::Confirmation(c) = &msg.payload else {
            return Err(WalletError::WrongKind);
        };
        let out = self
            .outgoing
            .get_mut(&c.payment)
            .ok_or(WalletError::UnknownPayment)?;
        if out.state != OutgoingState::Revealed {
            return Err(WalletError::NotPending);
        }
        if !msg.verify_from(&out.invoice.beneficiary_cert.subject_vk) {
            return Err(WalletError::WrongParty);
        }
        out.state = OutgoingState::Closed;
        Ok(())
    }

    /// Releases the standby repudiations of a pending incoming payment.
    fn release(&mut self, payment: &PaymentId) -> Vec<RepudiationEntry> {
        let Some(inc) = self.incoming.remove(payment) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (id, tip) in inc.coins.iter().zip(&inc.tips) {
            if let Some(rec) = self.coins.remove(id) {
                if let Some(entry) = rec.standby {
                    out.push(entry);
                    self.released.push(entry);
                }
            }
            self.repudiated.insert(*tip);
        }
        for (id, rec) in inc.replaced {
            self.coins.insert(id, rec);
        }
        if let Some(r) = self.reservations.get_mut(&payment.base) {
            r.open = false;
        }
        out
    }

    /// Completes a receive: every revealed nonce must reproduce its transfer
    /// block hash, otherwise the standby repudiations are delivered.
    pub fn finalize_receive(&mut self, reveal: &Message) -> Result<ReceiveOutcome, WalletError> {
        let Payload::SecretReveal(r) = &reveal.payload else {
            return Err(WalletError::WrongKind);
        };
        let inc = self
            .incoming
            .get(&r.payment)
            .ok_or(WalletError::UnknownPayment)?;
        if !reveal.verify_from(&inc.sender) {
            return Err(WalletError::WrongParty);
        }
        let mut revealed = Vec::with_capacity(inc.coins.len());
        let mut all_match = r.nonces.len() == inc.coins.len();
        for (id, nonce) in inc.coins.iter().zip(&r.nonces) {
            let mut chain = self.coins[id].chain.clone();
            let tip = chain.blocks.last_mut().expect("transfer tip");
            all_match &= tip.reveal(*nonce);
            revealed.push(chain);
        }
        if !all_match {
            let repudiations = self.release(&r.payment);
            return Ok(ReceiveOutcome::Repudiated(self.sign_message(
                Payload::RepudiationDelivery(RepudiationDelivery {
                    payment: r.payment,
                    repudiations,
                }),
            )));
        }
        let inc = self.incoming.remove(&r.payment).expect("present");
        for (i, (id, chain)) in inc.coins.iter().zip(revealed).enumerate() {
            self.coins.insert(id.clone(), CoinRecord::owned(chain));
            self.consumed.insert(r.payment.base + i as u64);
        }
        self.accepted.extend(inc.tips.iter().copied());
        if let Some(res) = self.reservations.get_mut(&r.payment.base) {
            res.open = false;
        }
        Ok(ReceiveOutcome::Accepted(self.sign_message(
            Payload::Confirmation(Confirmation { payment: r.payment }),
        )))
    }

    /// Timeout on the receiving side before the reveal: the payment is
    /// abandoned and its repudiations are delivered.
    pub fn expire_incoming(&mut self, payment: &PaymentId) -> Result<Message, WalletError> {
        if !self.incoming.contains_key(payment) {
            return Err(WalletError::UnknownPayment);
        }
        let repudiations = self.release(payment);
        Ok(
            self.sign_message(Payload::RepudiationDelivery(RepudiationDelivery {
                payment: *payment,
                repudiations,
            })),
        )
    }

    /// Writes a beneficiary's repudiation onto the matching transfer block,
    /// returning the coin to this wallet. Applying it again is a no-op.
    pub fn apply_repudiation(&mut self, entry: &RepudiationEntry) -> Result<CoinId, WalletError> {
        let found = self.coins.iter().find_map(|(id, rec)| {
            let escrow = rec.escrow.as_ref().filter(|b| b.hash == entry.hash);
            let tip = rec
                .chain
                .tip()
                .filter(|b| b.hash == entry.hash && b.variant() == Some(BlockVariant::Transfer));
            escrow.or(tip).map(|b| (id.clone(), b.clone()))
        });
        let (id, block) = found.ok_or(WalletError::UnknownTransfer)?;
        if !crypto::verify(
            &block.content.holder_cert.subject_vk,
            &block.repudiation_message(),
            &entry.signature,
        ) {
            return Err(WalletError::RepudiationSignature);
        }
        let rec = self.coins.get_mut(&id).expect("found");
        match rec.status {
            CoinStatus::PendingOutgoing => {
                let mut block = rec.escrow.take().expect("escrow present");
                block.repudiation = Some(entry.signature);
                rec.chain = rec.chain.append_block(block)?;
            }
            CoinStatus::TransferredAwaitingUpload | CoinStatus::ErrorFlagged => {
                rec.chain.blocks.last_mut().expect("tip").repudiation = Some(entry.signature);
            }
            CoinStatus::Owned | CoinStatus::Slow if block.repudiation.is_some() => return Ok(id),
            _ => return Err(WalletError::BadStatus),
        }
        rec.status = CoinStatus::Owned;
        Ok(id)
    }

    /// Applies the entries of a verified repudiation delivery; returns how
    /// many took effect.
    pub fn apply_delivery(&mut self, msg: &Message) -> Result<usize, WalletError> {
        let Payload::RepudiationDelivery(d) = &msg.payload else {
            return Err(WalletError::WrongKind);
        };
        if !msg.verify() {
            return Err(WalletError::WrongParty);
        }
        Ok(d.repudiations
            .iter()
            .filter(|e| self.apply_repudiation(e).is_ok())
            .count())
    }

    /// Blocks upload of a transferred coin whose transfer is disputed.
    pub fn flag_error(&mut self, id: &CoinId) -> Result<(), WalletError> {
        let rec = self.coins.get_mut(id).ok_or(WalletError::UnknownCoin)?;
        if rec.status != CoinStatus::TransferredAwaitingUpload {
            return Err(WalletError::BadStatus);
        }
        rec.status = CoinStatus::ErrorFlagged;
        Ok(())
    }

    /// Chains to upload: completed transfers, which leave the wallet, and
    /// owned coins, which stay. Flagged and pending coins are held back.
    pub fn upload_batch(&mut self) -> Vec<CoinChain> {
        let mut out = Vec::new();
        let mut done = Vec::new();
        for (id, rec) in &self.coins {
            match rec.status {
                CoinStatus::TransferredAwaitingUpload => {
                    out.push(rec.chain.clone());
                    done.push(id.clone());
                }
                CoinStatus::Owned | CoinStatus::Slow => out.push(rec.chain.clone()),
                _ => {}
            }
        }
        for id in done {
            self.coins.remove(&id);
        }
        out
    }

    /// Signs a central bank challenge for burning coin `id`.
    pub fn sign_burn(&self, challenge: &Challenge, id: &CoinId) -> Signature {
        self.person.sign(&burn_message(challenge, id))
    }

    /// Removes a coin after the central bank has burned it.
    pub fn remove_coin(&mut self, id: &CoinId) -> Option<CoinChain> {
        self.coins.remove(id).map(|r| r.chain)
    }

    /// Extends every owned dynamic coin up to its mining allowance. Coins
    /// that fell behind beyond the backlog limit turn slow and stop mining.
    pub fn mine_tick(&mut self, now: Timestamp) -> Vec<(CoinId, Block)> {
        self.tick(now);
        self.refresh_schedule(now);
        let Some(policy) = self.mining.clone() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let ids: Vec<CoinId> = self
            .coins
            .iter()
            .filter(|(_, r)| r.status == CoinStatus::Owned)
            .map(|(id, _)| id.clone())
            .collect();
        for id in ids {
            let allowance = pow::mining_allowance(&self.coins[&id].chain, &policy, self.clock);
            for _ in 0..allowance {
                let rec = &self.coins[&id];
                let mut content = BlockContent {
                    prev: rec.chain.tip_link(),
                    timestamp: self.clock,
                    holder_cert: self.person_cert.clone(),
                    wallet_cert: self.wallet_cert.clone(),
                    bank_cert: self.bank_cert.clone(),
                    child_value: None,
                    invoice_serial: None,
                    mined_nonce: Some(0),
                    secret_nonce: None,
                };
                let hash = content.mine(policy.bits_for(rec.chain.value()));
                let block = content.seal_single_with_hash(hash, &self.hardware.keys);
                let rec = self.coins.get_mut(&id).expect("present");
                match rec.chain.append_block(block.clone()) {
                    Ok(next) => rec.chain = next,
                    Err(_) => break,
                }
                out.push((id.clone(), block));
            }
        }
        out
    }

    /// Ids of coins in `status`, in store order.
    pub fn coins_with_status(&self, status: CoinStatus) -> Vec<CoinId> {
        self.coins
            .iter()
            .filter(|(_, r)| r.status == status)
            .map(|(id, _)| id.clone())
            .collect()
    }
}
