use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use super::*;
use crate::chain::MiningPolicy;

fn person(name: &str, tokens: u64) -> PersonSpec {
    PersonSpec {
        name: String::from(name),
        tokens: Amount::from_minor(tokens),
    }
}

fn at(t: u64, action: Action) -> Step {
    Step { at: t, action }
}

fn s(name: &str) -> String {
    String::from(name)
}

/// Alice holds one 100.00 coin and pays Bob `minor` at t=10.
fn payment(minor: u64) -> Scenario {
    Scenario {
        seed: 7,
        people: vec![person("alice", 100_000), person("bob", 0)],
        steps: vec![
            at(
                0,
                Action::CashOut {
                    who: s("alice"),
                    amount: Amount::from_minor(10_000),
                    hot: false,
                },
            ),
            at(
                10,
                Action::Pay {
                    from: s("alice"),
                    to: s("bob"),
                    amount: Amount::from_minor(minor),
                    slots: 2,
                },
            ),
        ],
        ..Scenario::default()
    }
}

fn events<'a>(sim: &'a Simulation, event: &str) -> Vec<&'a LogRecord> {
    sim.log.iter().filter(|r| r.event == event).collect()
}

fn value(sim: &Simulation, name: &str) -> u64 {
    sim.wallet(name)
        .map(|w| w.owned_value().minor())
        .unwrap_or(0)
}

#[test]
fn happy_payment_reaches_done_and_owned() {
    let sim = run_scenario(&payment(6_000)).unwrap();
    let session = &sim.sessions[0];
    assert_eq!(session.sender, SenderState::Done);
    assert_eq!(session.receiver, ReceiverState::Owned);
    assert_eq!(
        session.sender_trace,
        [
            SenderState::Idle,
            SenderState::Proposed,
            SenderState::AwaitApproval,
            SenderState::Revealed,
            SenderState::Done
        ]
    );
    assert_eq!(
        session.receiver_trace,
        [
            ReceiverState::Invoiced,
            ReceiverState::Evaluating,
            ReceiverState::Approved,
            ReceiverState::AwaitReveal,
            ReceiverState::Owned
        ]
    );
    assert_eq!(value(&sim, "alice"), 4_000);
    assert_eq!(value(&sim, "bob"), 6_000);
    assert!(events(&sim, "rejected").is_empty());
}

#[test]
fn runs_are_deterministic() {
    let mut sc = payment(2_500);
    sc.channel = ChannelConfig {
        drop: 0.2,
        duplicate: 0.3,
        tamper: 0.2,
        delay_min: 1,
        delay_max: 5,
    };
    sc.steps.push(at(
        20,
        Action::Pay {
            from: s("bob"),
            to: s("alice"),
            amount: Amount::from_minor(100),
            slots: 1,
        },
    ));
    let a = run_scenario(&sc).unwrap().render_log();
    let b = run_scenario(&sc).unwrap().render_log();
    assert_eq!(a, b);
    sc.seed += 1;
    let c = run_scenario(&sc).unwrap().render_log();
    assert_ne!(a, c);
}

#[test]
fn dropped_approval_times_out_both_sides() {
    let mut sc = payment(6_000);
    sc.faults
        .push(FaultRule::new(MessageClass::Response, Fault::Drop));
    let sim = run_scenario(&sc).unwrap();
    let session = &sim.sessions[0];
    assert_eq!(session.sender, SenderState::Timeout);
    assert_eq!(session.receiver, ReceiverState::RepudiationSent);
    // The sender never revealed, so its coin came back through expiry alone.
    assert_eq!(value(&sim, "alice"), 10_000);
    assert_eq!(value(&sim, "bob"), 0);
}

#[test]
fn dropped_secret_is_recovered_out_of_band() {
    let mut sc = payment(6_000);
    sc.faults
        .push(FaultRule::new(MessageClass::SecretReveal, Fault::Drop));
    sc.faults
        .push(FaultRule::new(MessageClass::Outcome, Fault::Drop));
    let lost = run_scenario(&sc).unwrap();
    assert_eq!(lost.sessions[0].receiver, ReceiverState::RepudiationSent);
    assert_eq!(value(&lost, "alice"), 4_000);
    assert_eq!(value(&lost, "bob"), 0);
    assert_eq!(events(&lost, "repudiation_string").len(), 1);

    sc.steps.push(at(
        200,
        Action::Recover {
            receiver: s("bob"),
            sender: s("alice"),
        },
    ));
    let sim = run_scenario(&sc).unwrap();
    assert_eq!(events(&sim, "recovered").len(), 1);
    assert_eq!(sim.sessions[0].sender, SenderState::Repudiated);
    assert_eq!(value(&sim, "alice"), 10_000);
}

#[test]
fn delivered_repudiation_restores_sender() {
    let mut sc = payment(6_000);
    sc.faults
        .push(FaultRule::new(MessageClass::SecretReveal, Fault::Drop));
    let sim = run_scenario(&sc).unwrap();
    assert_eq!(sim.sessions[0].sender, SenderState::Repudiated);
    assert_eq!(sim.sessions[0].receiver, ReceiverState::RepudiationSent);
    assert_eq!(value(&sim, "alice"), 10_000);
}

#[test]
fn tampered_messages_are_rejected() {
    let mut sc = payment(6_000);
    sc.channel.tamper = 1.0;
    let sim = run_scenario(&sc).unwrap();
    let received = events(&sim, "received").len();
    let rejected = events(&sim, "rejected").len();
    assert!(rejected >= 1);
    assert!(received + rejected >= 1);
    assert_ne!(sim.sessions[0].sender, SenderState::Done);
    assert_ne!(sim.sessions[0].receiver, ReceiverState::Owned);
    assert_eq!(value(&sim, "alice") + value(&sim, "bob"), 10_000);
}

#[test]
fn replayed_proposal_is_refused_without_effect() {
    let mut sc = payment(6_000);
    sc.steps.push(at(
        40,
        Action::Replay {
            class: MessageClass::ChainTransfer,
        },
    ));
    let sim = run_scenario(&sc).unwrap();
    let replay = events(&sim, "rejected");
    assert_eq!(replay.len(), 1);
    assert!(
        replay[0].detail.contains("reason=counter"),
        "{}",
        replay[0].detail
    );
    assert_eq!(sim.sessions[0].sender, SenderState::Done);
    assert_eq!(value(&sim, "bob"), 6_000);
}

#[test]
fn cloned_wallet_double_spend_is_flagged_at_upload() {
    let mut sc = payment(10_000);
    sc.people.push(person("carol", 0));
    sc.steps.push(at(
        5,
        Action::Clone {
            who: s("alice"),
            name: s("mallory"),
        },
    ));
    sc.steps.push(at(
        12,
        Action::Pay {
            from: s("mallory"),
            to: s("carol"),
            amount: Amount::from_minor(10_000),
            slots: 1,
        },
    ));
    sc.steps.push(at(100, Action::Upload { who: s("bob") }));
    sc.steps.push(at(101, Action::Upload { who: s("carol") }));
    let sim = run_scenario(&sc).unwrap();
    assert_eq!(sim.sessions[0].receiver, ReceiverState::Owned);
    assert_eq!(sim.sessions[1].receiver, ReceiverState::Owned);
    let refused = events(&sim, "upload_refused");
    assert_eq!(refused.len(), 1, "{}", sim.render_log());
    assert!(
        refused[0].detail.contains("divergent"),
        "{}",
        refused[0].detail
    );
}

#[test]
fn lost_wallet_value_is_claimed_by_last_uploader() {
    let mut sc = payment(10_000);
    sc.steps[0] = at(
        0,
        Action::CashOut {
            who: s("alice"),
            amount: Amount::from_minor(10_000),
            hot: true,
        },
    );
    sc.steps.push(at(50, Action::Upload { who: s("bob") }));
    sc.steps.push(at(60, Action::Lose { who: s("bob") }));
    sc.steps
        .push(at(40 * crate::institutions::DAY, Action::Claims));
    let sim = run_scenario(&sc).unwrap();
    let credit = events(&sim, "claim_credit");
    assert_eq!(credit.len(), 1);
    assert!(
        credit[0].detail.contains("owner=bob"),
        "{}",
        credit[0].detail
    );
    assert_eq!(sim.tokens("bob").minor(), 10_000);
}

#[test]
fn burn_returns_tokens() {
    let mut sc = payment(6_000);
    sc.steps.push(at(60, Action::Burn { who: s("bob") }));
    let sim = run_scenario(&sc).unwrap();
    assert_eq!(events(&sim, "burn_credit").len(), 1);
    assert_eq!(sim.tokens("bob").minor(), 6_000);
    assert_eq!(sim.tokens("alice").minor(), 90_000);
    assert_eq!(value(&sim, "bob"), 0);
}

#[test]
fn mining_blackout_makes_coin_slow() {
    let mut policy = MiningPolicy::with_bits(2);
    policy.interval = 10;
    policy.max_backlog = 3;
    let sc = Scenario {
        seed: 3,
        horizon: Some(120),
        central: crate::institutions::CentralConfig {
            mining: Some(policy),
            ..Default::default()
        },
        people: vec![person("alice", 100_000), person("bob", 0)],
        steps: vec![
            at(
                0,
                Action::CashOut {
                    who: s("alice"),
                    amount: Amount::from_minor(10_000),
                    hot: false,
                },
            ),
            at(
                1,
                Action::Blackout {
                    who: s("alice"),
                    ticks: 80,
                },
            ),
            at(
                75,
                Action::Pay {
                    from: s("alice"),
                    to: s("bob"),
                    amount: Amount::from_minor(1_000),
                    slots: 1,
                },
            ),
            at(76, Action::CollectSlow { who: s("alice") }),
        ],
        ..Scenario::default()
    };
    let sim = run_scenario(&sc).unwrap();
    assert_eq!(
        events(&sim, "payment_failed").len(),
        1,
        "{}",
        sim.render_log()
    );
    assert_eq!(
        events(&sim, "collect_slow").len(),
        1,
        "{}",
        sim.render_log()
    );
    assert_eq!(sim.tokens("alice").minor(), 100_000);
}

#[test]
fn scenario_errors() {
    let mut sc = payment(1);
    sc.steps.push(at(1, Action::Upload { who: s("zed") }));
    assert_eq!(
        run_scenario(&sc).err(),
        Some(ScenarioError::UnknownActor(s("zed")))
    );
    let mut sc = payment(1);
    sc.channel.drop = 1.5;
    assert!(matches!(
        run_scenario(&sc),
        Err(ScenarioError::Probability(_))
    ));
    let mut sc = payment(1);
    sc.people.push(person("bob", 1));
    assert_eq!(
        run_scenario(&sc).err(),
        Some(ScenarioError::DuplicateActor(s("bob")))
    );
    let _ = format!("{}", ScenarioError::FaultIndex);
}

#[test]
fn tampered_block_in_transit_fails_hash_link() {
    let base = run_scenario(&payment(6_000)).unwrap();
    let size = base
        .log
        .iter()
        .find(|r| r.event == "send" && r.detail.starts_with("kind=ChainTransfer"))
        .and_then(|r| r.detail.rsplit("bytes=").next())
        .and_then(|n| n.parse::<usize>().ok())
        .expect("proposal sent");
    let mut hash_link = 0;
    for offset in (0..size).step_by(7) {
        let mut sc = payment(6_000);
        sc.faults.push(FaultRule {
            offset: Some(offset),
            ..FaultRule::new(MessageClass::ChainTransfer, Fault::Tamper)
        });
        let sim = run_scenario(&sc).unwrap();
        assert_ne!(sim.sessions[0].receiver, ReceiverState::Owned);
        assert_eq!(value(&sim, "alice") + value(&sim, "bob"), 10_000);
        if sim
            .log
            .iter()
            .any(|r| r.event == "rejected" && r.detail.contains("reason=chain-hash-link"))
        {
            hash_link += 1;
        }
    }
    assert!(hash_link > 0);
}
