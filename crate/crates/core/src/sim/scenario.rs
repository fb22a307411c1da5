use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::amount::Amount;
use crate::institutions::CentralConfig;
use crate::protocol::MessageClass;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub drop: f64,
    pub duplicate: f64,
    pub tamper: f64,
    pub delay_min: u64,
    pub delay_max: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            drop: 0.0,
            duplicate: 0.0,
            tamper: 0.0,
            delay_min: 1,
            delay_max: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Drop,
    Tamper,
    Duplicate,
}

impl Fault {
    pub const ALL: [Fault; 3] = [Fault::Drop, Fault::Tamper, Fault::Duplicate];

    pub fn name(self) -> &'static str {
        match self {
            Fault::Drop => "drop",
            Fault::Tamper => "tamper",
            Fault::Duplicate => "duplicate",
        }
    }

    pub fn from_name(name: &str) -> Option<Fault> {
        Fault::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(name))
    }
}

/// Forces `fault` on messages of `class`: on the `nth` one (1-based) if
/// given, otherwise on every one. The first matching rule wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultRule {
    pub class: MessageClass,
    pub fault: Fault,
    pub nth: Option<usize>,
    /// Byte a tamper flips, modulo the message length; random when absent.
    pub offset: Option<usize>,
}

impl FaultRule {
    pub fn new(class: MessageClass, fault: Fault) -> FaultRule {
        FaultRule {
            class,
            fault,
            nth: None,
            offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    CashOut {
        who: String,
        amount: Amount,
        hot: bool,
    },
    Pay {
        from: String,
        to: String,
        amount: Amount,
        slots: u64,
    },
    Upload {
        who: String,
    },
    /// Burns every owned coin of `who`.
    Burn {
        who: String,
    },
    /// Settles every slow coin of `who`.
    CollectSlow {
        who: String,
    },
    Lose {
        who: String,
    },
    /// Resolves every serial whose claim deadline has passed.
    Claims,
    /// Suspends mining for `who` during `ticks`.
    Blackout {
        who: String,
        ticks: u64,
    },
    /// Copies the storage of `who` into a new actor `name`.
    Clone {
        who: String,
        name: String,
    },
    /// Re-sends the most recent message of `class`.
    Replay {
        class: MessageClass,
    },
    /// Carries every released repudiation of `receiver` to `sender` out of band.
    Recover {
        receiver: String,
        sender: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub at: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonSpec {
    pub name: String,
    pub tokens: Amount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub channel: ChannelConfig,
    /// Ticks either side waits for the next protocol message.
    pub timeout: u64,
    /// Last tick with scheduled mining; defaults past the last step.
    pub horizon: Option<u64>,
    pub central: CentralConfig,
    pub people: Vec<PersonSpec>,
    pub steps: Vec<Step>,
    pub faults: Vec<FaultRule>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            channel: ChannelConfig::default(),
            timeout: 30,
            horizon: None,
            central: CentralConfig::default(),
            people: Vec::new(),
            steps: Vec::new(),
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("unknown actor {0}")]
    UnknownActor(String),
    #[error("duplicate actor {0}")]
    DuplicateActor(String),
    #[error("probability {0} outside [0, 1]")]
    Probability(String),
    #[error("delay range {0}..{1} is empty")]
    Delay(u64, u64),
    #[error("fault rule nth must be at least 1")]
    FaultIndex,
}

impl Scenario {
    pub fn horizon(&self) -> u64 {
        self.horizon.unwrap_or_else(|| {
            let last = self.steps.iter().map(|s| s.at).max().unwrap_or(0);
            last + 2 * self.timeout + 10
        })
    }

    /// Names of the provisioned people.
    fn actors(&self) -> Result<BTreeSet<String>, ScenarioError> {
        let mut names = BTreeSet::new();
        for p in &self.people {
            if !names.insert(p.name.clone()) {
                return Err(ScenarioError::DuplicateActor(p.name.clone()));
            }
        }
        Ok(names)
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        let ch = &self.channel;
        for (name, p) in [
            ("drop", ch.drop),
            ("duplicate", ch.duplicate),
            ("tamper", ch.tamper),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ScenarioError::Probability(String::from(name)));
            }
        }
        if ch.delay_max < ch.delay_min {
            return Err(ScenarioError::Delay(ch.delay_min, ch.delay_max));
        }
        if self.faults.iter().any(|f| f.nth == Some(0)) {
            return Err(ScenarioError::FaultIndex);
        }
        let mut names = self.actors()?;
        let mut steps: Vec<&Step> = self.steps.iter().collect();
        steps.sort_by_key(|s| s.at);
        for step in steps {
            let known = |n: &String| {
                if names.contains(n) {
                    Ok(())
                } else {
                    Err(ScenarioError::UnknownActor(n.clone()))
                }
            };
            match &step.action {
                Action::CashOut { who, .. }
                | Action::Upload { who }
                | Action::Burn { who }
                | Action::CollectSlow { who }
                | Action::Lose { who }
                | Action::Blackout { who, .. } => known(who)?,
                Action::Pay { from, to, .. } => {
                    known(from)?;
                    known(to)?;
                }
                Action::Recover { receiver, sender } => {
                    known(receiver)?;
                    known(sender)?;
                }
                Action::Clone { who, name } => {
                    known(who)?;
                    if !names.insert(name.clone()) {
                        return Err(ScenarioError::DuplicateActor(name.clone()));
                    }
                }
                Action::Claims | Action::Replay { .. } => {}
            }
        }
        Ok(())
    }
}
