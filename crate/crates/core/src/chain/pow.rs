//! Proof-of-work policy and mining schedule for dynamic chains.

use alloc::vec::Vec;

use super::{BlockVariant, CoinChain};
use crate::amount::{Amount, Timestamp};

/// Difficulty and pacing rules for continuously mined coins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiningPolicy {
    /// Leading zero bits required when no value tier applies.
    pub base_bits: u32,
    /// `(minimum face value, bits)` tiers; the highest matching tier wins.
    pub tiers: Vec<(Amount, u32)>,
    /// Ticks between scheduled blocks.
    pub interval: u64,
    /// Extra backlog blocks a wallet may mine per interval while catching up.
    pub catch_up_pace: u32,
    /// Backlog (in intervals) beyond which the coin is slow.
    pub max_backlog: u64,
}

impl Default for MiningPolicy {
    fn default() -> Self {
        MiningPolicy {
            base_bits: 12,
            tiers: Vec::new(),
            interval: 10,
            catch_up_pace: 4,
            max_backlog: 360,
        }
    }
}

impl MiningPolicy {
    pub fn with_bits(bits: u32) -> Self {
        MiningPolicy {
            base_bits: bits,
            ..Default::default()
        }
    }

    pub fn bits_for(&self, value: Amount) -> u32 {
        self.tiers
            .iter()
            .filter(|(min, _)| value >= *min)
            .map(|(_, bits)| *bits)
            .max()
            .unwrap_or(self.base_bits)
    }

    /// Blocks that may be mined inside one interval window.
    pub fn blocks_per_window(&self) -> usize {
        1 + self.catch_up_pace as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleStatus {
    /// Mining is within `max_backlog` of the schedule.
    Conformant { due: u64, mined: u64 },
    /// Backlog exceeds `max_backlog`; transfers are blocked.
    Slow { due: u64, mined: u64 },
}

impl ScheduleStatus {
    pub fn is_slow(&self) -> bool {
        matches!(self, ScheduleStatus::Slow { .. })
    }

    pub fn backlog(&self) -> u64 {
        match *self {
            ScheduleStatus::Conformant { due, mined } | ScheduleStatus::Slow { due, mined } => {
                due.saturating_sub(mined)
            }
        }
    }
}

/// Timestamp of the last non-mined block and the mined blocks after it.
pub fn mining_run(chain: &CoinChain) -> (Timestamp, Vec<Timestamp>) {
    let anchor = chain
        .blocks
        .iter()
        .rposition(|b| b.variant() != Some(BlockVariant::Mined));
    let anchor_ts = match anchor {
        Some(i) => chain.blocks[i].timestamp(),
        None => chain.genesis.timestamp,
    };
    let start = anchor.map_or(0, |i| i + 1);
    let mined = chain.blocks[start..]
        .iter()
        .map(|b| b.timestamp())
        .collect();
    (anchor_ts, mined)
}

pub fn schedule_status(chain: &CoinChain, policy: &MiningPolicy, now: Timestamp) -> ScheduleStatus {
    let (anchor, mined) = mining_run(chain);
    let due = now.since(anchor) / policy.interval.max(1);
    let mined = mined.len() as u64;
    if due.saturating_sub(mined) > policy.max_backlog {
        ScheduleStatus::Slow { due, mined }
    } else {
        ScheduleStatus::Conformant { due, mined }
    }
}

/// How many blocks a wallet may mine now: the backlog, capped by the
/// per-window budget.
pub fn mining_allowance(chain: &CoinChain, policy: &MiningPolicy, now: Timestamp) -> usize {
    let (anchor, mined) = mining_run(chain);
    let interval = policy.interval.max(1);
    let due = (now.since(anchor) / interval) as usize;
    let backlog = due.saturating_sub(mined.len());
    let in_window = mined.iter().filter(|t| now.since(**t) < interval).count();
    backlog.min(policy.blocks_per_window().saturating_sub(in_window))
}
