//! Full-chain validation producing a per-block failure report.

use alloc::vec::Vec;
use core::fmt;

use super::pow::MiningPolicy;
use super::{Block, BlockVariant, CoinChain, Holder};
use crate::amount::{Amount, Timestamp};
use crate::crypto::{self, verify_certificate_path, verify_holder_certificates, Role, TrustStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureCode {
    HashLink,
    Signature,
    Certificate,
    Variant,
    Value,
    Counter,
    Difficulty,
    Timestamp,
}

impl FailureCode {
    pub fn name(self) -> &'static str {
        match self {
            FailureCode::HashLink => "hash-link",
            FailureCode::Signature => "signature",
            FailureCode::Certificate => "certificate",
            FailureCode::Variant => "variant",
            FailureCode::Value => "value",
            FailureCode::Counter => "counter",
            FailureCode::Difficulty => "difficulty",
            FailureCode::Timestamp => "timestamp",
        }
    }

    pub fn from_name(name: &str) -> Option<FailureCode> {
        ALL_CODES.iter().copied().find(|c| c.name() == name)
    }
}

const ALL_CODES: [FailureCode; 8] = [
    FailureCode::HashLink,
    FailureCode::Signature,
    FailureCode::Certificate,
    FailureCode::Variant,
    FailureCode::Value,
    FailureCode::Counter,
    FailureCode::Difficulty,
    FailureCode::Timestamp,
];

impl fmt::Display for FailureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Block index 0 is the genesis block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Failure {
    pub index: usize,
    pub code: FailureCode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub failures: Vec<Failure>,
}

impl ValidationReport {
    pub fn valid(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn has(&self, index: usize, code: FailureCode) -> bool {
        self.failures.contains(&Failure { index, code })
    }

    fn push(&mut self, index: usize, code: FailureCode) {
        let f = Failure { index, code };
        if !self.failures.contains(&f) {
            self.failures.push(f);
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid() {
            return f.write_str("valid");
        }
        f.write_str("invalid")?;
        for fail in &self.failures {
            write!(f, " ({},{})", fail.index, fail.code)?;
        }
        Ok(())
    }
}

/// Validates every block of `chain`.
///
/// Per block, in order: hash linkage, hash recomputation, certificate paths,
/// signatures, variant rules, fork value, difficulty and mining schedule
/// (only with a `mining` policy) and timestamps. A withheld transfer block
/// at the tip is checked for its signature over the stored hash only; its
/// hash recomputation waits for the reveal.
pub fn validate_chain(
    chain: &CoinChain,
    trust: &TrustStore,
    mining: Option<&MiningPolicy>,
    now: Timestamp,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let g = &chain.genesis;

    if g.recompute_hash() != g.hash {
        report.push(0, FailureCode::HashLink);
    }
    if !trust.trusts(&g.central_vk)
        || g.bank_cert.role != Role::Bank
        || !verify_certificate_path(&g.bank_cert, None, trust)
    {
        report.push(0, FailureCode::Certificate);
    }
    if !crypto::verify(&g.central_vk, &g.hash.0, &g.central_sig) {
        report.push(0, FailureCode::Signature);
    }
    if g.value.is_zero() {
        report.push(0, FailureCode::Value);
    }
    if g.timestamp > now {
        report.push(0, FailureCode::Timestamp);
    }

    let mut holder = Holder::Bank(g.bank_cert.subject_vk);
    let mut value: Amount = g.value;
    let mut prev_link = g.signed_hash();
    let mut prev_ts = g.timestamp;
    // Timestamps of the current run of mined blocks and its anchor.
    let mut anchor_ts = g.timestamp;
    let mut run: Vec<Timestamp> = Vec::new();
    let last = chain.blocks.len();

    for (pos, block) in chain.blocks.iter().enumerate() {
        let index = pos + 1;
        let c = &block.content;

        if c.prev != prev_link {
            report.push(index, FailureCode::HashLink);
        }
        match block.recompute_hash() {
            Some(h) if h != block.hash => report.push(index, FailureCode::HashLink),
            Some(_) => {}
            None if index != last => report.push(index, FailureCode::Variant),
            None => {}
        }
        if !verify_holder_certificates(&c.holder_cert, &c.wallet_cert, &c.bank_cert, trust) {
            report.push(index, FailureCode::Certificate);
        }

        let variant = match block.variant() {
            Some(v) => v,
            None => {
                report.push(index, FailureCode::Variant);
                prev_link = block.signed_hash();
                continue;
            }
        };

        check_signer(&mut report, index, block, variant, &holder);

        if block.repudiation.is_some() && variant != BlockVariant::Transfer {
            report.push(index, FailureCode::Variant);
        }
        if let Some(rep) = &block.repudiation {
            if variant == BlockVariant::Transfer
                && (block.is_withheld()
                    || !crypto::verify(
                        &c.holder_cert.subject_vk,
                        &block.repudiation_message(),
                        rep,
                    ))
            {
                report.push(index, FailureCode::Signature);
            }
        }

        match variant {
            BlockVariant::Delivery if index != 1 => report.push(index, FailureCode::Variant),
            BlockVariant::Delivery => {}
            _ if index == 1 => report.push(index, FailureCode::Variant),
            BlockVariant::Fork => {
                if g.kind.is_hot() {
                    report.push(index, FailureCode::Variant);
                }
                let child = c.child_value.unwrap_or_default();
                if child.is_zero() || child >= value {
                    report.push(index, FailureCode::Value);
                }
                value = child;
            }
            BlockVariant::Mined | BlockVariant::Transfer => {}
        }

        if let Some(policy) = mining {
            let bits = policy.bits_for(value);
            match variant {
                BlockVariant::Mined => {
                    if block.hash.leading_zero_bits() < bits {
                        report.push(index, FailureCode::Difficulty);
                    }
                    run.push(c.timestamp);
                    let k = run.len() as u64;
                    if c.timestamp.since(anchor_ts) < k.saturating_mul(policy.interval) {
                        report.push(index, FailureCode::Difficulty);
                    }
                    let window = policy.blocks_per_window();
                    if run.len() > window {
                        let first = run[run.len() - 1 - window];
                        if c.timestamp.since(first) < policy.interval {
                            report.push(index, FailureCode::Difficulty);
                        }
                    }
                }
                BlockVariant::Transfer
                    if c.mined_nonce.is_none() || block.hash.leading_zero_bits() < bits =>
                {
                    report.push(index, FailureCode::Difficulty);
                }
                _ => {}
            }
        }
        if variant != BlockVariant::Mined {
            anchor_ts = c.timestamp;
            run.clear();
        }

        if c.timestamp < prev_ts || c.timestamp > now {
            report.push(index, FailureCode::Timestamp);
        }
        if variant == BlockVariant::Transfer {
            if let Some(exp) = g.kind.expiration() {
                if c.timestamp > exp {
                    report.push(index, FailureCode::Timestamp);
                }
            }
        }

        holder = holder_after(&holder, block, variant);
        prev_link = block.signed_hash();
        prev_ts = prev_ts.max(c.timestamp);
    }

    report.failures.sort();
    report
}

fn check_signer(
    report: &mut ValidationReport,
    index: usize,
    block: &Block,
    variant: BlockVariant,
    holder: &Holder,
) {
    let hash = &block.hash.0;
    let seal = &block.seal;
    let ok = match (variant, holder) {
        (BlockVariant::Delivery, Holder::Bank(bank)) => {
            seal.secondary.is_none() && crypto::verify(bank, hash, &seal.primary)
        }
        (BlockVariant::Mined, Holder::Person(p)) => {
            if block.content.party() != *p {
                report.push(index, FailureCode::Variant);
            }
            seal.secondary.is_none() && crypto::verify(&p.wallet, hash, &seal.primary)
        }
        (BlockVariant::Fork | BlockVariant::Transfer, Holder::Person(p)) => {
            if variant == BlockVariant::Fork && block.content.party() != *p {
                report.push(index, FailureCode::Variant);
            }
            crypto::verify(&p.wallet, hash, &seal.primary)
                && seal
                    .secondary
                    .is_some_and(|s| crypto::verify(&p.person, &seal.primary.0, &s))
        }
        _ => {
            report.push(index, FailureCode::Variant);
            true
        }
    };
    if !ok {
        report.push(index, FailureCode::Signature);
    }
}

/// Holder after `block`, given the holder before it.
pub(crate) fn holder_after(before: &Holder, block: &Block, variant: BlockVariant) -> Holder {
    match variant {
        BlockVariant::Delivery => Holder::Person(block.content.party()),
        BlockVariant::Mined | BlockVariant::Fork => before.clone(),
        BlockVariant::Transfer if block.repudiation.is_some() || block.is_withheld() => {
            before.clone()
        }
        BlockVariant::Transfer => Holder::Person(block.content.party()),
    }
}
