//! Serial registry: every chain the central bank has seen, per coin family.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::amount::Amount;
use crate::chain::{current_holder, BlockVariant, CoinChain, CoinId, CoinKind, SignedHash};
use crate::crypto::{Digest, PublicKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerialStatus {
    Outstanding,
    Burned,
    /// Conflicting uploads, or a hot-coin claim without evidence.
    ClaimPending,
}

impl SerialStatus {
    pub fn name(self) -> &'static str {
        match self {
            SerialStatus::Outstanding => "outstanding",
            SerialStatus::Burned => "burned",
            SerialStatus::ClaimPending => "claim_pending",
        }
    }
}

/// One spendable coin of a family as currently known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leaf {
    pub value: Amount,
    pub owner: PublicKey,
    pub burned: bool,
}

/// All chains sharing one genesis block.
#[derive(Debug, Clone)]
pub struct Family {
    pub serial: String,
    pub genesis_hash: Digest,
    pub kind: CoinKind,
    pub value: Amount,
    /// The chain as delivered by the bank.
    pub issued: CoinChain,
    /// Chains uploaded by holders, in arrival order, without duplicates.
    pub uploads: Vec<CoinChain>,
    pub leaves: BTreeMap<CoinId, Leaf>,
    pub burned_value: Amount,
    pub conflict: bool,
    pub parked: bool,
    pub evidence: Vec<String>,
}

impl Family {
    pub fn status(&self) -> SerialStatus {
        if self.burned_value == self.value {
            SerialStatus::Burned
        } else if self.conflict || self.parked {
            SerialStatus::ClaimPending
        } else {
            SerialStatus::Outstanding
        }
    }

    pub fn outstanding(&self) -> Amount {
        self.value.saturating_sub(self.burned_value)
    }

    fn known(&self) -> impl Iterator<Item = &CoinChain> {
        core::iter::once(&self.issued).chain(&self.uploads)
    }

    /// Longest known chain of coin `id`; ties go to the earliest tip, then
    /// the smallest tip hash.
    pub fn best_chain(&self, id: &CoinId) -> Option<&CoinChain> {
        self.known().filter(|c| c.coin_id() == *id).min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then(a.tip_timestamp().cmp(&b.tip_timestamp()))
                .then(a.tip_hash().cmp(&b.tip_hash()))
        })
    }

    /// Coin ids that have been fractioned into known children.
    fn ancestors(&self) -> BTreeSet<CoinId> {
        let mut out = BTreeSet::new();
        for c in self.known() {
            let path = c.fork_path();
            for k in 0..path.len() {
                let branch = if k == 0 { None } else { Some(path[k - 1]) };
                out.insert(CoinId {
                    serial: self.serial.clone(),
                    branch,
                });
            }
        }
        out
    }

    fn recompute_leaves(&mut self) {
        let ancestors = self.ancestors();
        let ids: BTreeSet<CoinId> = self.known().map(CoinChain::coin_id).collect();
        let mut leaves = BTreeMap::new();
        for id in ids.into_iter().filter(|id| !ancestors.contains(id)) {
            let Some(best) = self.best_chain(&id) else {
                continue;
            };
            let owner = current_holder(best)
                .map(|v| v.holder.key())
                .unwrap_or(best.genesis.bank_cert.subject_vk);
            let burned = self.leaves.get(&id).is_some_and(|l| l.burned);
            leaves.insert(
                id,
                Leaf {
                    value: best.value(),
                    owner,
                    burned,
                },
            );
        }
        // A burned coin stays listed even if a conflicting fork now hides it.
        for (id, leaf) in &self.leaves {
            if leaf.burned && !leaves.contains_key(id) {
                leaves.insert(id.clone(), leaf.clone());
            }
        }
        self.leaves = leaves;
    }

    fn flag(&mut self, reason: String) {
        self.conflict = true;
        if !self.evidence.contains(&reason) {
            self.evidence.push(reason);
        }
    }
}

/// Finds double-spend evidence between two chains of the same family.
pub(crate) fn pair_conflict(a: &CoinChain, b: &CoinChain) -> Option<&'static str> {
    let p = a
        .blocks
        .iter()
        .zip(&b.blocks)
        .take_while(|(x, y)| x.hash == y.hash)
        .count();
    if p < a.blocks.len() && p < b.blocks.len() {
        let (x, y) = (&a.blocks[p], &b.blocks[p]);
        if x.variant() != Some(BlockVariant::Fork) || y.variant() != Some(BlockVariant::Fork) {
            return Some("divergent blocks after a shared prefix");
        }
    }
    for i in 0..p {
        let (x, y) = (&a.blocks[i], &b.blocks[i]);
        let extended_unrepudiated =
            (x.repudiation.is_some() && y.repudiation.is_none() && b.blocks.len() > i + 1)
                || (y.repudiation.is_some() && x.repudiation.is_none() && a.blocks.len() > i + 1);
        if extended_unrepudiated {
            return Some("repudiated transfer extended by its beneficiary");
        }
    }
    None
}

/// Checks that every fork point has at most two children whose values sum
/// to the value in force before the fork.
pub(crate) fn fork_conflict<'a>(
    chains: impl Iterator<Item = &'a CoinChain>,
) -> Option<&'static str> {
    // prev link -> (value before the fork, distinct child block hashes and values)
    let mut points: BTreeMap<SignedHash, (Amount, BTreeMap<Digest, Amount>)> = BTreeMap::new();
    for c in chains {
        let mut value = c.genesis.value;
        for b in &c.blocks {
            if let (Some(BlockVariant::Fork), Some(child)) = (b.variant(), b.content.child_value) {
                let entry = points
                    .entry(b.content.prev)
                    .or_insert((value, BTreeMap::new()));
                entry.1.insert(b.hash, child);
                value = child;
            }
        }
    }
    for (before, children) in points.values() {
        if children.len() > 2 {
            return Some("more than two children at one fork point");
        }
        if children.len() == 2 && children.values().copied().sum::<Amount>() != *before {
            return Some("fork children do not sum to the mother value");
        }
    }
    None
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    families: BTreeMap<String, Family>,
}

impl Registry {
    pub fn family(&self, serial: &str) -> Option<&Family> {
        self.families.get(serial)
    }

    pub(crate) fn family_mut(&mut self, serial: &str) -> Option<&mut Family> {
        self.families.get_mut(serial)
    }

    pub fn families(&self) -> impl Iterator<Item = &Family> {
        self.families.values()
    }

    pub fn outstanding_value(&self) -> Amount {
        self.families.values().map(Family::outstanding).sum()
    }

    pub(crate) fn register_issue(&mut self, chain: CoinChain) {
        let g = &chain.genesis;
        let mut family = Family {
            serial: g.serial.clone(),
            genesis_hash: g.hash,
            kind: g.kind,
            value: g.value,
            issued: chain.clone(),
            uploads: Vec::new(),
            leaves: BTreeMap::new(),
            burned_value: Amount::ZERO,
            conflict: false,
            parked: false,
            evidence: Vec::new(),
        };
        family.recompute_leaves();
        self.families.insert(family.serial.clone(), family);
    }

    /// Stores a validated chain of a known family and re-derives its leaves.
    /// Returns the reason if the upload is evidence of a double spend; the
    /// chain is kept either way.
    pub(crate) fn record_upload(&mut self, chain: &CoinChain) -> Result<(), String> {
        let family = self
            .families
            .get_mut(chain.serial())
            .expect("caller checked the serial");
        let duplicate = family.known().any(|c| c == chain);
        let mut reason = None;
        if !duplicate {
            for other in family.known() {
                if let Some(r) = pair_conflict(chain, other) {
                    reason = Some(r);
                    break;
                }
            }
            for burned_id in family
                .leaves
                .iter()
                .filter(|(_, l)| l.burned)
                .map(|(id, _)| id)
            {
                let Some(burned) = family.best_chain(burned_id) else {
                    continue;
                };
                if burned.is_prefix_of(chain) && chain.len() > burned.len() {
                    reason = Some("upload extends a burned coin");
                }
            }
            family.uploads.push(chain.clone());
            if reason.is_none() {
                reason = fork_conflict(family.known());
            }
            family.recompute_leaves();
        }
        match reason {
            Some(r) => {
                family.flag(format!("{r} ({})", chain.coin_id()));
                Err(String::from(r))
            }
            None => Ok(()),
        }
    }

    /// One line per known leaf: `<coin_id> <status> <owner_vk> <value> <kind>`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for f in self.families.values() {
            let family_status = f.status();
            for (id, leaf) in &f.leaves {
                let status = if leaf.burned {
                    SerialStatus::Burned
                } else if family_status == SerialStatus::ClaimPending {
                    SerialStatus::ClaimPending
                } else {
                    SerialStatus::Outstanding
                };
                let _ = writeln!(
                    out,
                    "{id} {} {} {} {}",
                    status.name(),
                    leaf.owner,
                    leaf.value,
                    f.kind.name()
                );
            }
        }
        out
    }
}
