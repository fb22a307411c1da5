//! Line-oriented scenario files.
//!
//! One directive per line; `#` starts a comment. Keys are case sensitive,
//! message classes and faults are not.
//!
//! ```text
//! seed 42
//! timeout 30
//! horizon 120
//! channel drop=0.1 duplicate=0.0 tamper=0.05 delay=1..3
//! mining bits=12 interval=10 pace=4 backlog=360
//! threshold 500.00
//! hot expiration=2592000 window=604800
//! max-coins 16
//! person alice tokens=1000.00
//! fault SecretReveal drop nth=1
//! fault ChainTransfer tamper offset=200
//! at 0 cash-out alice 100.00 cold
//! at 10 pay alice bob 60.00 slots=2
//! at 20 upload bob
//! at 30 burn bob
//! at 30 collect-slow alice
//! at 40 lose bob
//! at 40 claims
//! at 5 blackout alice 100
//! at 5 clone alice mallory
//! at 50 replay ChainTransfer
//! at 60 recover bob alice
//! ```

use std::str::FromStr;

use localcoin_core::amount::Amount;
use localcoin_core::chain::MiningPolicy;
use localcoin_core::protocol::MessageClass;
use localcoin_core::sim::{Action, Fault, FaultRule, PersonSpec, Scenario, Step};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

struct Line<'a> {
    number: usize,
    words: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.number,
            message: message.into(),
        })
    }

    fn arity(&self, n: usize) -> Result<(), ParseError> {
        if self.words.len() != n {
            return self.err(format!("`{}` takes {} argument(s)", self.words[0], n - 1));
        }
        Ok(())
    }

    fn parse<T: FromStr>(&self, word: &str, what: &str) -> Result<T, ParseError> {
        match word.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.err(format!("bad {what} `{word}`")),
        }
    }

    /// Splits `key=value`; `None` for a bare word.
    fn key_value(&self, word: &'a str) -> Option<(&'a str, &'a str)> {
        word.split_once('=')
    }

    fn options(&self, from: usize, keys: &[&str]) -> Result<Vec<(&'a str, &'a str)>, ParseError> {
        let mut out = Vec::new();
        for w in &self.words[from..] {
            match self.key_value(w) {
                Some((k, v)) if keys.contains(&k) => out.push((k, v)),
                _ => return self.err(format!("unexpected `{w}`")),
            }
        }
        Ok(out)
    }
}

fn class(line: &Line<'_>, word: &str) -> Result<MessageClass, ParseError> {
    MessageClass::from_name(word)
        .map_or_else(|| line.err(format!("unknown message class `{word}`")), Ok)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut sc = Scenario::default();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = content.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let line = Line {
            number: i + 1,
            words,
        };
        let w = &line.words;
        match w[0] {
            "seed" => {
                line.arity(2)?;
                sc.seed = line.parse(w[1], "seed")?;
            }
            "timeout" => {
                line.arity(2)?;
                sc.timeout = line.parse(w[1], "timeout")?;
            }
            "horizon" => {
                line.arity(2)?;
                sc.horizon = Some(line.parse(w[1], "horizon")?);
            }
            "threshold" => {
                line.arity(2)?;
                sc.central.mint_threshold = line.parse(w[1], "amount")?;
            }
            "max-coins" => {
                line.arity(2)?;
                sc.central.max_coins_per_request = line.parse(w[1], "count")?;
            }
            "hot" => {
                for (k, v) in line.options(1, &["expiration", "window"])? {
                    let ticks = line.parse(v, k)?;
                    match k {
                        "expiration" => sc.central.hot_expiration = ticks,
                        _ => sc.central.hot_claim_window = ticks,
                    }
                }
            }
            "channel" => {
                for (k, v) in line.options(1, &["drop", "duplicate", "tamper", "delay"])? {
                    match k {
                        "drop" => sc.channel.drop = line.parse(v, "probability")?,
                        "duplicate" => sc.channel.duplicate = line.parse(v, "probability")?,
                        "tamper" => sc.channel.tamper = line.parse(v, "probability")?,
                        _ => {
                            let (lo, hi) = v.split_once("..").unwrap_or((v, v));
                            sc.channel.delay_min = line.parse(lo, "delay")?;
                            sc.channel.delay_max = line.parse(hi, "delay")?;
                        }
                    }
                }
            }
            "mining" => {
                let mut policy = MiningPolicy::default();
                for (k, v) in line.options(1, &["bits", "interval", "pace", "backlog"])? {
                    match k {
                        "bits" => policy.base_bits = line.parse(v, "bits")?,
                        "interval" => policy.interval = line.parse(v, "interval")?,
                        "pace" => policy.catch_up_pace = line.parse(v, "pace")?,
                        _ => policy.max_backlog = line.parse(v, "backlog")?,
                    }
                }
                if policy.interval == 0 {
                    return line.err("mining interval must be positive");
                }
                sc.central.mining = Some(policy);
            }
            "person" => {
                if w.len() < 2 {
                    return line.err("`person` needs a name");
                }
                let mut tokens = Amount::default();
                for (_, v) in line.options(2, &["tokens"])? {
                    tokens = line.parse(v, "amount")?;
                }
                sc.people.push(PersonSpec {
                    name: w[1].to_string(),
                    tokens,
                });
            }
            "fault" => {
                if w.len() < 3 {
                    return line.err("`fault` needs a message class and a fault");
                }
                let class = class(&line, w[1])?;
                let Some(fault) = Fault::from_name(w[2]) else {
                    return line.err(format!("unknown fault `{}`", w[2]));
                };
                let mut rule = FaultRule::new(class, fault);
                for (k, v) in line.options(3, &["nth", "offset"])? {
                    match k {
                        "nth" => rule.nth = Some(line.parse(v, "index")?),
                        _ => rule.offset = Some(line.parse(v, "offset")?),
                    }
                }
                sc.faults.push(rule);
            }
            "at" => {
                if w.len() < 3 {
                    return line.err("`at` needs a tick and an action");
                }
                let at = line.parse(w[1], "tick")?;
                let action = parse_action(&line)?;
                sc.steps.push(Step { at, action });
            }
            other => return line.err(format!("unknown directive `{other}`")),
        }
    }
    Ok(sc)
}

fn parse_action(line: &Line<'_>) -> Result<Action, ParseError> {
    let w = &line.words[2..];
    let name = |i: usize| w[i].to_string();
    let need = |n: usize| {
        if w.len() == n {
            Ok(())
        } else {
            line.err(format!("`{}` takes {} argument(s)", w[0], n - 1))
        }
    };
    let action = match w[0] {
        "cash-out" => {
            if !(3..=4).contains(&w.len()) {
                return line.err("`cash-out` takes a person, an amount and an optional kind");
            }
            let hot = match w.get(3).copied() {
                None | Some("cold") => false,
                Some("hot") => true,
                Some(k) => return line.err(format!("unknown coin kind `{k}`")),
            };
            Action::CashOut {
                who: name(1),
                amount: line.parse(w[2], "amount")?,
                hot,
            }
        }
        "pay" => {
            if !(4..=5).contains(&w.len()) {
                return line.err("`pay` takes a payer, a payee, an amount and optional slots");
            }
            let mut slots = 1;
            for (_, v) in line.options(6, &["slots"])? {
                slots = line.parse(v, "slots")?;
            }
            Action::Pay {
                from: name(1),
                to: name(2),
                amount: line.parse(w[3], "amount")?,
                slots,
            }
        }
        "upload" => {
            need(2)?;
            Action::Upload { who: name(1) }
        }
        "burn" => {
            need(2)?;
            Action::Burn { who: name(1) }
        }
        "collect-slow" => {
            need(2)?;
            Action::CollectSlow { who: name(1) }
        }
        "lose" => {
            need(2)?;
            Action::Lose { who: name(1) }
        }
        "claims" => {
            need(1)?;
            Action::Claims
        }
        "blackout" => {
            need(3)?;
            Action::Blackout {
                who: name(1),
                ticks: line.parse(w[2], "ticks")?,
            }
        }
        "clone" => {
            need(3)?;
            Action::Clone {
                who: name(1),
                name: name(2),
            }
        }
        "replay" => {
            need(2)?;
            Action::Replay {
                class: class(line, w[1])?,
            }
        }
        "recover" => {
            need(3)?;
            Action::Recover {
                receiver: name(1),
                sender: name(2),
            }
        }
        other => return line.err(format!("unknown action `{other}`")),
    };
    Ok(action)
}
