//! Banks and the central bank: accounts, minting, delivery, the serial
//! registry, burning, hot-coin claims and slow-coin collection.

mod registry;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use registry::{Family, Leaf, Registry, SerialStatus};

use crate::amount::{Amount, Timestamp};
use crate::chain::{
    current_holder, mint_genesis, schedule_status, validate_chain, BlockContent, BlockVariant,
    ChainError, CoinChain, CoinId, CoinKind, HolderStatus, MiningPolicy, ValidationReport,
    DEFAULT_MINT_THRESHOLD,
};
use crate::crypto::{
    self, issue_certificate, Certificate, Digest, KeyPair, PublicKey, Role, Signature, TrustStore,
};
use crate::encoding::Canonical;

const OEM_TAG: &[u8] = b"localcoin/oem/v1";
const BURN_TAG: &[u8] = b"localcoin/burn/v1";

/// Ticks per simulated day.
pub const DAY: u64 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstitutionError {
    #[error("manufacturer attestation does not verify")]
    Attestation,
    #[error("person is not a customer of this bank")]
    ForeignCustomer,
    #[error("amount must be positive")]
    NonPositive,
    #[error("insufficient tokens: balance {balance}, requested {requested}")]
    InsufficientTokens { balance: Amount, requested: Amount },
    #[error("request needs {needed} coins, the cap is {cap}")]
    TooManyCoins { needed: u64, cap: u64 },
    #[error("chain failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("chain tip still awaits its secret nonce")]
    Withheld,
    #[error("unknown serial {0}")]
    UnknownSerial(String),
    #[error("serial {serial} flagged: {reason}")]
    Conflict { serial: String, reason: String },
    #[error("serial is awaiting claim resolution")]
    ClaimPending,
    #[error("coin already burned")]
    AlreadyBurned,
    #[error("coin has been fractioned; its children are burned instead")]
    NotALeaf,
    #[error("claimant is not the current holder")]
    NotHolder,
    #[error("challenge unknown, already used or issued to another key")]
    StaleChallenge,
    #[error("proof of key does not verify")]
    BadProof,
    #[error("claim resolution applies to hot coins only")]
    NotHot,
    #[error("claim deadline {0} not reached")]
    DeadlineNotReached(Timestamp),
    #[error("no mining policy is configured")]
    NoMiningPolicy,
    #[error("coin keeps to its mining schedule")]
    NotSlow,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Device maker whose signature vouches for a wallet's hardware key.
pub struct Manufacturer {
    keys: KeyPair,
}

impl Manufacturer {
    pub fn new(keys: KeyPair) -> Self {
        Manufacturer { keys }
    }

    pub fn vk(&self) -> PublicKey {
        self.keys.vk
    }

    pub fn attest(&self, wallet_vk: &PublicKey) -> Signature {
        self.keys.sign(&attestation_message(wallet_vk))
    }
}

fn attestation_message(wallet_vk: &PublicKey) -> Vec<u8> {
    [OEM_TAG, &wallet_vk.0].concat()
}

/// Commercial bank: certifies its customers' wallets and delivers coins.
pub struct Bank {
    pub name: String,
    keys: KeyPair,
    cert: Certificate,
    trusted_oems: Vec<PublicKey>,
}

impl Bank {
    pub fn new(name: &str, keys: KeyPair, cert: Certificate, trusted_oems: Vec<PublicKey>) -> Self {
        Bank {
            name: String::from(name),
            keys,
            cert,
            trusted_oems,
        }
    }

    pub fn vk(&self) -> PublicKey {
        self.keys.vk
    }

    pub fn cert(&self) -> &Certificate {
        &self.cert
    }

    /// Issues cross-linked wallet and person certificates once the wallet's
    /// hardware key carries a trusted manufacturer attestation.
    pub fn certify_holder(
        &self,
        wallet_vk: PublicKey,
        attestation: &Signature,
        person_vk: PublicKey,
    ) -> Result<(Certificate, Certificate), InstitutionError> {
        let msg = attestation_message(&wallet_vk);
        if !self
            .trusted_oems
            .iter()
            .any(|oem| crypto::verify(oem, &msg, attestation))
        {
            return Err(InstitutionError::Attestation);
        }
        let wallet = issue_certificate(&self.keys, wallet_vk, Some(person_vk), Role::Wallet)
            .expect("wallet role carries a link");
        let person = issue_certificate(&self.keys, person_vk, Some(wallet_vk), Role::Person)
            .expect("person role carries a link");
        Ok((wallet, person))
    }

    /// Appends the delivery block handing a freshly minted coin to a holder.
    pub fn deliver(
        &self,
        chain: &CoinChain,
        person_cert: &Certificate,
        wallet_cert: &Certificate,
        now: Timestamp,
    ) -> Result<CoinChain, ChainError> {
        let content = BlockContent {
            prev: chain.tip_link(),
            timestamp: now.max(chain.tip_timestamp()),
            holder_cert: person_cert.clone(),
            wallet_cert: wallet_cert.clone(),
            bank_cert: self.cert.clone(),
            child_value: None,
            invoice_serial: None,
            mined_nonce: None,
            secret_nonce: None,
        };
        chain.append_block(content.seal_single(&self.keys))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralConfig {
    pub mint_threshold: Amount,
    /// Hot coin expiration, in ticks after minting.
    pub hot_expiration: u64,
    /// Ticks between expiration and claim deadline.
    pub hot_claim_window: u64,
    pub max_coins_per_request: u64,
    /// Present when coins are dynamic chains.
    pub mining: Option<MiningPolicy>,
}

impl Default for CentralConfig {
    fn default() -> Self {
        CentralConfig {
            mint_threshold: DEFAULT_MINT_THRESHOLD,
            hot_expiration: 30 * DAY,
            hot_claim_window: 7 * DAY,
            max_coins_per_request: 16,
            mining: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoinRequest {
    Cold,
    /// Deadlines from the central bank configuration.
    Hot,
}

/// Nonce a claimant signs to prove control of a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Challenge {
    pub id: u64,
    pub nonce: Digest,
}

/// Message a claimant signs for `challenge` to burn coin `id`.
pub fn burn_message(challenge: &Challenge, id: &CoinId) -> Vec<u8> {
    [BURN_TAG, &challenge.nonce.0, &id.to_canonical_bytes()].concat()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurnProof {
    pub challenge_id: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimDecision {
    Credited {
        owner: PublicKey,
        value: Amount,
    },
    /// No uploads to decide on; the serial stays claim pending.
    Parked,
}

/// Token and reserve balances kept by the central bank.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Accounts {
    pub tokens: BTreeMap<PublicKey, Amount>,
    pub reserves: BTreeMap<PublicKey, Amount>,
    pub customer_bank: BTreeMap<PublicKey, PublicKey>,
}

impl Accounts {
    pub fn tokens_of(&self, person: &PublicKey) -> Amount {
        self.tokens.get(person).copied().unwrap_or_default()
    }

    pub fn total_tokens(&self) -> Amount {
        self.tokens.values().copied().sum()
    }

    fn credit(&mut self, person: PublicKey, fallback_bank: PublicKey, value: Amount) {
        *self.tokens.entry(person).or_default() += value;
        let bank = self
            .customer_bank
            .get(&person)
            .copied()
            .unwrap_or(fallback_bank);
        *self.reserves.entry(bank).or_default() += value;
    }
}

pub struct CentralBank {
    keys: KeyPair,
    trust: TrustStore,
    pub config: CentralConfig,
    registry: Registry,
    accounts: Accounts,
    next_serial: u64,
    next_challenge: u64,
    challenges: BTreeMap<u64, (PublicKey, Challenge)>,
}

enum SettlePath {
    Burn,
    SlowCollection,
}

impl CentralBank {
    pub fn new(keys: KeyPair, config: CentralConfig) -> Self {
        CentralBank {
            trust: TrustStore::new(keys.vk),
            keys,
            config,
            registry: Registry::default(),
            accounts: Accounts::default(),
            next_serial: 1,
            next_challenge: 1,
            challenges: BTreeMap::new(),
        }
    }

    pub fn vk(&self) -> PublicKey {
        self.keys.vk
    }

    pub fn trust(&self) -> &TrustStore {
        &self.trust
    }

    /// Replaces the signing key; coins minted under earlier keys stay valid.
    pub fn rotate_key(&mut self, next: KeyPair) {
        self.trust.rotate(next.vk);
        self.keys = next;
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn accounts(&self) -> &Accounts {
        &self.accounts
    }

    pub fn certify_bank(&self, bank_vk: PublicKey) -> Certificate {
        issue_certificate(&self.keys, bank_vk, None, Role::Bank).expect("bank role needs no link")
    }

    /// Credits deposited tokens to a customer of `bank_vk`.
    pub fn open_account(&mut self, person: PublicKey, bank_vk: PublicKey, tokens: Amount) {
        self.accounts.customer_bank.insert(person, bank_vk);
        *self.accounts.tokens.entry(person).or_default() += tokens;
        *self.accounts.reserves.entry(bank_vk).or_default() += tokens;
    }

    /// Tokens plus the face value of every coin not yet burned.
    pub fn money_supply(&self) -> Amount {
        self.accounts.total_tokens() + self.registry.outstanding_value()
    }

    /// Exchanges tokens for coins of at most the mint threshold each, minted
    /// here and delivered by `bank` to the customer's wallet.
    pub fn cash_out(
        &mut self,
        bank: &Bank,
        person_cert: &Certificate,
        wallet_cert: &Certificate,
        amount: Amount,
        request: CoinRequest,
        now: Timestamp,
    ) -> Result<Vec<CoinChain>, InstitutionError> {
        if amount.is_zero() {
            return Err(InstitutionError::NonPositive);
        }
        let person = person_cert.subject_vk;
        if person_cert.issuer_vk != bank.vk()
            || !crypto::verify_holder_certificates(
                person_cert,
                wallet_cert,
                bank.cert(),
                &self.trust,
            )
        {
            return Err(InstitutionError::ForeignCustomer);
        }
        let balance = self.accounts.tokens_of(&person);
        if balance < amount {
            return Err(InstitutionError::InsufficientTokens {
                balance,
                requested: amount,
            });
        }
        let threshold = self.config.mint_threshold.minor();
        let needed = amount.minor().div_ceil(threshold);
        if needed > self.config.max_coins_per_request {
            return Err(InstitutionError::TooManyCoins {
                needed,
                cap: self.config.max_coins_per_request,
            });
        }
        let kind = match request {
            CoinRequest::Cold => CoinKind::Cold,
            CoinRequest::Hot => {
                let expiration = now.plus(self.config.hot_expiration);
                CoinKind::Hot {
                    expiration,
                    claim_deadline: expiration.plus(self.config.hot_claim_window),
                }
            }
        };
        let mut coins = Vec::new();
        let mut left = amount.minor();
        while left > 0 {
            let value = Amount::from_minor(left.min(threshold));
            left -= value.minor();
            let serial = format!("C{:06}", self.next_serial);
            self.next_serial += 1;
            let genesis = mint_genesis(
                &self.keys,
                bank.cert().clone(),
                value,
                kind,
                now,
                &serial,
                self.config.mint_threshold,
            )?;
            let chain = bank.deliver(&CoinChain::new(genesis), person_cert, wallet_cert, now)?;
            self.registry.register_issue(chain.clone());
            coins.push(chain);
        }
        self.accounts
            .tokens
            .insert(person, balance.saturating_sub(amount));
        let reserve = self.accounts.reserves.entry(bank.vk()).or_default();
        *reserve = reserve.saturating_sub(amount);
        Ok(coins)
    }

    fn check_upload(&self, chain: &CoinChain, now: Timestamp) -> Result<(), InstitutionError> {
        let family = self
            .registry
            .family(chain.serial())
            .ok_or_else(|| InstitutionError::UnknownSerial(String::from(chain.serial())))?;
        if family.genesis_hash != chain.genesis.hash {
            return Err(InstitutionError::UnknownSerial(String::from(
                chain.serial(),
            )));
        }
        let report = validate_chain(chain, &self.trust, self.config.mining.as_ref(), now);
        if !report.valid() {
            return Err(InstitutionError::Invalid(report));
        }
        if chain.tip().is_some_and(|b| b.is_withheld()) {
            return Err(InstitutionError::Withheld);
        }
        Ok(())
    }

    /// Records a holder's chain. Conflicting uploads are kept as evidence and
    /// flag the whole serial family.
    pub fn upload_chain(
        &mut self,
        chain: &CoinChain,
        now: Timestamp,
    ) -> Result<PublicKey, InstitutionError> {
        self.check_upload(chain, now)?;
        self.registry
            .record_upload(chain)
            .map_err(|reason| InstitutionError::Conflict {
                serial: String::from(chain.serial()),
                reason,
            })?;
        let family = self.registry.family(chain.serial()).expect("registered");
        Ok(family
            .leaves
            .get(&chain.coin_id())
            .map(|l| l.owner)
            .unwrap_or(family.issued.genesis.bank_cert.subject_vk))
    }

    pub fn issue_challenge(&mut self, claimant: PublicKey) -> Challenge {
        let id = self.next_challenge;
        self.next_challenge += 1;
        let nonce = crypto::digest_parts(&[
            b"localcoin/challenge/v1",
            &self.keys.vk.0,
            &id.to_be_bytes(),
        ]);
        let challenge = Challenge { id, nonce };
        self.challenges.insert(id, (claimant, challenge));
        challenge
    }

    /// Retires a coin and credits its holder's tokens.
    pub fn burn_coin(
        &mut self,
        chain: &CoinChain,
        claimant: PublicKey,
        proof: &BurnProof,
        now: Timestamp,
    ) -> Result<Amount, InstitutionError> {
        self.settle(chain, claimant, proof, now, SettlePath::Burn)
    }

    /// Burns a dynamic coin whose mining fell behind beyond the backlog
    /// limit, as if it were a static cold coin.
    pub fn collect_slow_coin(
        &mut self,
        chain: &CoinChain,
        claimant: PublicKey,
        proof: &BurnProof,
        now: Timestamp,
    ) -> Result<Amount, InstitutionError> {
        self.settle(chain, claimant, proof, now, SettlePath::SlowCollection)
    }

    fn settle(
        &mut self,
        chain: &CoinChain,
        claimant: PublicKey,
        proof: &BurnProof,
        now: Timestamp,
        path: SettlePath,
    ) -> Result<Amount, InstitutionError> {
        let (owner, challenge) = self
            .challenges
            .remove(&proof.challenge_id)
            .ok_or(InstitutionError::StaleChallenge)?;
        if owner != claimant {
            return Err(InstitutionError::StaleChallenge);
        }
        let id = chain.coin_id();
        if !crypto::verify(&claimant, &burn_message(&challenge, &id), &proof.signature) {
            return Err(InstitutionError::BadProof);
        }
        if let SettlePath::SlowCollection = path {
            let policy = self
                .config
                .mining
                .as_ref()
                .ok_or(InstitutionError::NoMiningPolicy)?;
            if !schedule_status(chain, policy, now).is_slow() {
                return Err(InstitutionError::NotSlow);
            }
        }
        self.upload_chain(chain, now)?;
        let family = self.registry.family(chain.serial()).expect("registered");
        match family.status() {
            SerialStatus::Burned => return Err(InstitutionError::AlreadyBurned),
            SerialStatus::ClaimPending => return Err(InstitutionError::ClaimPending),
            SerialStatus::Outstanding => {}
        }
        let leaf = family.leaves.get(&id).ok_or(InstitutionError::NotALeaf)?;
        if leaf.burned {
            return Err(InstitutionError::AlreadyBurned);
        }
        let best = family.best_chain(&id).expect("leaf has a chain");
        let view = current_holder(best)?;
        if view.holder.person() != Some(claimant)
            || matches!(view.status, HolderStatus::AwaitingReveal { .. })
        {
            return Err(InstitutionError::NotHolder);
        }
        let value = leaf.value;
        let bank = holder_bank(best);
        self.mark_burned(chain.serial(), &id, value);
        self.accounts.credit(claimant, bank, value);
        Ok(value)
    }

    fn mark_burned(&mut self, serial: &str, id: &CoinId, value: Amount) {
        let family = self.registry.family_mut(serial).expect("registered");
        if let Some(leaf) = family.leaves.get_mut(id) {
            leaf.burned = true;
        }
        family.burned_value += value;
        family.parked = false;
    }

    /// Decides ownership of an unburned hot coin once its claim deadline has
    /// passed: the holder of the longest valid uploaded chain is credited.
    pub fn resolve_claims(
        &mut self,
        serial: &str,
        now: Timestamp,
    ) -> Result<ClaimDecision, InstitutionError> {
        let family = self
            .registry
            .family(serial)
            .ok_or_else(|| InstitutionError::UnknownSerial(String::from(serial)))?;
        let CoinKind::Hot { claim_deadline, .. } = family.kind else {
            return Err(InstitutionError::NotHot);
        };
        if now < claim_deadline {
            return Err(InstitutionError::DeadlineNotReached(claim_deadline));
        }
        if family.status() == SerialStatus::Burned || family.leaves.values().any(|l| l.burned) {
            return Err(InstitutionError::AlreadyBurned);
        }
        let mining = self.config.mining.as_ref();
        let best =
            crate::chain::longest_valid_chain(&family.uploads, &self.trust, mining, now).cloned();
        let Some(best) = best else {
            self.registry.family_mut(serial).expect("registered").parked = true;
            return Ok(ClaimDecision::Parked);
        };
        let owner = current_holder(&best)?.holder.key();
        let value = best.value();
        let bank = holder_bank(&best);
        let family = self.registry.family_mut(serial).expect("registered");
        family.conflict = false;
        self.mark_burned(serial, &best.coin_id(), value);
        self.accounts.credit(owner, bank, value);
        Ok(ClaimDecision::Credited { owner, value })
    }

    /// Serials whose claim deadline has passed and that are not burned.
    pub fn claimable_serials(&self, now: Timestamp) -> Vec<String> {
        self.registry
            .families()
            .filter(|f| {
                f.kind.claim_deadline().is_some_and(|d| now >= d)
                    && f.status() != SerialStatus::Burned
            })
            .map(|f| f.serial.clone())
            .collect()
    }

    /// Holders of coin `id` after each block of its best known chain, with
    /// consecutive repeats removed.
    pub fn ownership_history(&self, id: &CoinId) -> Option<Vec<PublicKey>> {
        let chain = self.registry.family(&id.serial)?.best_chain(id)?;
        let mut out: Vec<PublicKey> = Vec::new();
        for n in 0..=chain.blocks.len() {
            let prefix = CoinChain {
                genesis: chain.genesis.clone(),
                blocks: chain.blocks[..n].to_vec(),
            };
            let key = current_holder(&prefix).ok()?.holder.key();
            if out.last() != Some(&key) {
                out.push(key);
            }
        }
        Some(out)
    }
}

/// Bank of the current holder: the bank certificate on the block that last
/// handed the coin over.
fn holder_bank(chain: &CoinChain) -> PublicKey {
    let mut bank = chain.genesis.bank_cert.subject_vk;
    for b in &chain.blocks {
        let handover = match b.variant() {
            Some(BlockVariant::Delivery) => true,
            Some(BlockVariant::Transfer) => b.repudiation.is_none() && !b.is_withheld(),
            _ => false,
        };
        if handover {
            bank = b.content.bank_cert.subject_vk;
        }
    }
    bank
}

#[cfg(test)]
mod tests;
