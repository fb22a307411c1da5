//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{golden_chain, golden_path, load, localcoin, run, scenario_path};
use localcoin::files::{parse_trust, read_chain};
use localcoin_core::amount::{Amount, Timestamp};
use localcoin_core::chain::{
    current_holder, validate_chain, BlockVariant, CoinChain, CoinKind, HolderCredentials,
};
use localcoin_core::crypto::{seed_from_label, KeyPair};
use localcoin_core::encoding::Canonical;
use localcoin_core::institutions::{
    Bank, CentralBank, CentralConfig, CoinRequest, Manufacturer, SerialStatus,
};
use localcoin_core::protocol::MessageClass;
use localcoin_core::sim::{
    Action, Fault, FaultRule, PersonSpec, ReceiverState, Scenario, SenderState, Simulation, Step,
};
use localcoin_core::wallet::{export_repudiation_string, import_repudiation_string, CoinStatus};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn amount(s: &str) -> Amount {
    s.parse().expect("amount literal")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn owned(sim: &Simulation, name: &str) -> Amount {
    sim.wallet(name)
        .map(|w| w.owned_value())
        .unwrap_or_default()
}

fn events(sim: &Simulation, actor: &str, event: &str) -> usize {
    sim.log
        .iter()
        .filter(|r| r.actor == actor && r.event == event)
        .count()
}

fn happy_path() -> Verdict {
    let sc = load("happy_path.scn");
    let start = Instant::now();
    let sim = run(&sc);
    let elapsed = start.elapsed();
    ensure(sim.tokens("bob") == amount("60.00"), || {
        format!("bob tokens {}", sim.tokens("bob"))
    })?;
    ensure(sim.tokens("alice") == amount("900.00"), || {
        format!("alice tokens {}", sim.tokens("alice"))
    })?;
    let alice = sim.wallet("alice").unwrap();
    let coins: Vec<_> = alice.coins().values().collect();
    ensure(coins.len() == 1, || {
        format!("alice holds {} coins", coins.len())
    })?;
    let c = &coins[0];
    ensure(
        c.status == CoinStatus::Owned && c.chain.kind() == CoinKind::Cold,
        || "alice coin not an owned cold coin".into(),
    )?;
    ensure(c.chain.value() == amount("40.00"), || {
        format!("alice coin value {}", c.chain.value())
    })?;
    let view = current_holder(&c.chain).map_err(|e| e.to_string())?;
    ensure(view.holder.person() == Some(alice.person_vk()), || {
        "alice is not the chain holder".into()
    })?;
    ensure(sim.wallet("bob").unwrap().coins().is_empty(), || {
        "bob still holds coins after burning".into()
    })?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "bob +60.00 tokens, alice keeps a 40.00 cold chain, {:.0} ms",
        elapsed.as_secs_f64() * 1e3
    ))
}

fn double_spend() -> Verdict {
    let base = load("double_spend.scn");
    let mut flagged = 0;
    for seed in 0..100 {
        let mut sc = base.clone();
        sc.seed = seed;
        sc.channel.delay_max = 1 + seed % 4;
        let sim = run(&sc);
        let accepted = sim
            .sessions
            .iter()
            .filter(|s| s.receiver == ReceiverState::Owned)
            .count();
        ensure(accepted == 2, || {
            format!("seed {seed}: {accepted} receivers accepted")
        })?;
        let family = sim
            .central
            .registry()
            .family("C000001")
            .ok_or("serial not registered")?;
        if family.status() == SerialStatus::ClaimPending {
            flagged += 1;
        }
        let credited = sim.tokens("bob").minor() + sim.tokens("carol").minor();
        ensure(credited <= 10_000, || {
            format!("seed {seed}: double credit {credited}")
        })?;
    }
    ensure(flagged == 100, || format!("flagged {flagged}/100"))?;
    Ok(String::from(
        "both receivers accept offline, family flagged 100/100, no double credit",
    ))
}

fn person(name: &str, tokens: &str) -> PersonSpec {
    PersonSpec {
        name: name.into(),
        tokens: amount(tokens),
    }
}

fn at(t: u64, action: Action) -> Step {
    Step { at: t, action }
}

fn pay(t: u64, minor: u64, slots: u64) -> Step {
    at(
        t,
        Action::Pay {
            from: "alice".into(),
            to: "bob".into(),
            amount: Amount::from_minor(minor),
            slots,
        },
    )
}

/// Alice holds one 100.00 cold coin.
fn two_party(seed: u64) -> Scenario {
    Scenario {
        seed,
        people: vec![person("alice", "1000.00"), person("bob", "0")],
        steps: vec![at(
            0,
            Action::CashOut {
                who: "alice".into(),
                amount: amount("100.00"),
                hot: false,
            },
        )],
        ..Scenario::default()
    }
}

fn replay_immunity() -> Verdict {
    let mut violations = 0;
    let mut max_dup = 0.0f64;
    for seed in 0..1000u64 {
        let mut sc = two_party(seed);
        sc.channel.duplicate = (seed % 11) as f64 / 10.0;
        sc.channel.delay_max = 1 + seed % 3;
        max_dup = max_dup.max(sc.channel.duplicate);
        sc.steps.push(pay(10, 3_000, 2));
        sc.steps.push(pay(50, 2_000, 1));
        for (t, class) in [
            (100, MessageClass::ChainTransfer),
            (101, MessageClass::SecretReveal),
            (102, MessageClass::Response),
            (103, MessageClass::Invoice),
        ] {
            sc.steps.push(at(t, Action::Replay { class }));
        }
        let sim = run(&sc);
        let bob = sim.wallet("bob").unwrap();
        let held: Amount = bob.coins().values().map(|c| c.chain.value()).sum();
        let consumed = bob.consumed_invoices().len() as u64;
        let paid: Amount = sim
            .sessions
            .iter()
            .filter(|s| s.receiver == ReceiverState::Owned)
            .map(|s| s.amount)
            .sum();
        let total = owned(&sim, "alice") + owned(&sim, "bob");
        if held.minor() > consumed * 10_000
            || owned(&sim, "bob") != paid
            || total > amount("100.00")
        {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    Ok(format!(
        "1000 runs, duplicate probability up to {max_dup:.1}, zero violations"
    ))
}

/// Plan digit per message class: deliver, drop, tamper or duplicate.
const CHOICES: [Option<Fault>; 4] = [
    None,
    Some(Fault::Drop),
    Some(Fault::Tamper),
    Some(Fault::Duplicate),
];

fn repudiation_totality() -> Verdict {
    let (mut to_alice, mut to_bob, mut recoverable) = (0, 0, 0);
    for plan in 0..4u64.pow(5) {
        let mut sc = two_party(plan);
        sc.steps.push(pay(10, 6_000, 1));
        let mut digits = plan;
        for class in MessageClass::ALL {
            if let Some(fault) = CHOICES[(digits % 4) as usize] {
                sc.faults.push(FaultRule {
                    nth: Some(1),
                    ..FaultRule::new(class, fault)
                });
            }
            digits /= 4;
        }
        let sim = run(&sc);
        let s = &sim.sessions[0];
        let sender_done = s.sender.is_terminal() || s.sender == SenderState::Idle;
        ensure(sender_done && s.receiver.is_terminal(), || {
            format!("plan {plan}: session not terminal: {s:?}")
        })?;
        let alice = sim.wallet("alice").unwrap();
        let bob = sim.wallet("bob").unwrap();
        let (a, b) = (alice.owned_value().minor(), bob.owned_value().minor());
        match (a, b) {
            (10_000, 0) => to_alice += 1,
            (4_000, 6_000) => {
                let chain = &bob.coins().values().next().unwrap().chain;
                let view = current_holder(chain).map_err(|e| e.to_string())?;
                ensure(view.holder.person() == Some(bob.person_vk()), || {
                    format!("plan {plan}: bob not holder")
                })?;
                to_bob += 1;
            }
            (4_000, 0) => {
                let mut twin = alice.clone_storage();
                for entry in bob.released_repudiations() {
                    let text = export_repudiation_string(entry);
                    let entry = import_repudiation_string(&text).map_err(|e| e.to_string())?;
                    let _ = twin.apply_repudiation(&entry);
                }
                ensure(twin.owned_value().minor() == 10_000, || {
                    format!("plan {plan}: value stuck")
                })?;
                recoverable += 1;
            }
            _ => return Err(format!("plan {plan}: alice owns {a}, bob owns {b}")),
        }
    }
    Ok(format!("1024 plans: alice holds {to_alice}, bob holds {to_bob}, recoverable by string {recoverable}, stuck 0"))
}

fn fork_conservation() -> Verdict {
    let kp = |l: &str| KeyPair::from_seed(seed_from_label(l));
    let config = Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let ops = proptest::collection::vec((any::<u16>(), any::<u32>()), 1..10);
    let result = runner.run(&ops, |ops| {
        let mut central = CentralBank::new(kp("central"), CentralConfig::default());
        let oem = Manufacturer::new(kp("oem"));
        let bank_keys = kp("bank");
        let bank = Bank::new(
            "bank",
            bank_keys.clone(),
            central.certify_bank(bank_keys.vk),
            vec![oem.vk()],
        );
        let (wallet, person) = (kp("alice/wallet"), kp("alice/person"));
        let (wallet_cert, person_cert) = bank
            .certify_holder(wallet.vk, &oem.attest(&wallet.vk), person.vk)
            .unwrap();
        central.open_account(person.vk, bank.vk(), amount("100.00"));
        let mut leaves: Vec<CoinChain> = central
            .cash_out(
                &bank,
                &person_cert,
                &wallet_cert,
                amount("100.00"),
                CoinRequest::Cold,
                Timestamp(0),
            )
            .unwrap();
        let creds = HolderCredentials {
            wallet: &wallet,
            person: &person,
            wallet_cert: &wallet_cert,
            person_cert: &person_cert,
            bank_cert: bank.cert(),
        };
        for (t, (pick, frac)) in ops.iter().enumerate() {
            let i = *pick as usize % leaves.len();
            let v = leaves[i].value().minor();
            if v < 2 {
                continue;
            }
            let a = 1 + *frac as u64 % (v - 1);
            let (l, r) = leaves[i]
                .fork(
                    Amount::from_minor(a),
                    Amount::from_minor(v - a),
                    &creds,
                    Timestamp(t as u64 + 1),
                )
                .unwrap();
            leaves[i] = l;
            leaves.push(r);
        }
        let sum: Amount = leaves.iter().map(CoinChain::value).sum();
        prop_assert_eq!(sum, amount("100.00"));
        for leaf in &leaves {
            prop_assert!(validate_chain(leaf, central.trust(), None, Timestamp(100)).valid());
            prop_assert!(central.upload_chain(leaf, Timestamp(100)).is_ok());
        }
        prop_assert_eq!(central.registry().outstanding_value(), amount("100.00"));
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok(String::from(
        "500 split sequences, leaves always sum to 100.00",
    ))
}

fn longest_chain_claims() -> Verdict {
    let base = load("lost_wallet.scn");
    for seed in 0..100 {
        let mut sc = base.clone();
        sc.seed = seed;
        sc.channel.delay_max = 1 + seed % 3;
        let sim = run(&sc);
        ensure(events(&sim, "central", "claim_credit") == 1, || {
            format!("seed {seed}: no claim credit")
        })?;
        ensure(sim.tokens("bob") == amount("100.00"), || {
            format!("seed {seed}: bob tokens {}", sim.tokens("bob"))
        })?;
        ensure(sim.tokens("alice") == amount("900.00"), || {
            format!("seed {seed}: alice tokens {}", sim.tokens("alice"))
        })?;
    }
    let mut sc = base;
    sc.steps
        .retain(|s| !matches!(s.action, Action::Lose { .. } | Action::Claims));
    sc.steps.push(at(70, Action::Burn { who: "bob".into() }));
    let sim = run(&sc);
    let credit = sim
        .log
        .iter()
        .find(|r| r.event == "burn_credit")
        .ok_or("no pre-deadline credit")?;
    ensure(credit.actor == "bob" && credit.time == 70, || {
        format!("unexpected credit {credit}")
    })?;
    ensure(sim.tokens("bob") == amount("100.00"), || {
        "pre-deadline claim not credited".into()
    })?;
    Ok(String::from(
        "100/100 lost-wallet claims credit the beneficiary; full-chain claim credited at t=70",
    ))
}

fn dynamic_chain() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_s = dir.path().to_str().unwrap();
    let out = localcoin(&[
        "run",
        scenario_path("mining.scn").to_str().unwrap(),
        "--chains-out",
        dir_s,
    ]);
    ensure(out.status.success(), || "run failed".into())?;
    let path = dir.path().join("alice-C000001.chain");
    let chain = read_chain(&path).map_err(|e| e.to_string())?;
    let mined: Vec<_> = chain
        .blocks
        .iter()
        .filter(|b| b.variant() == Some(BlockVariant::Mined))
        .collect();
    ensure(mined.len() == 6, || format!("{} mined blocks", mined.len()))?;
    ensure(
        mined.iter().all(|b| b.hash.leading_zero_bits() >= 12),
        || "block below difficulty".into(),
    )?;
    let trust = dir.path().join("trust.txt");
    let verify = localcoin(&[
        "verify",
        path.to_str().unwrap(),
        "--trust",
        trust.to_str().unwrap(),
        "--difficulty",
        "12",
    ]);
    ensure(verify.status.code() == Some(0), || {
        String::from_utf8_lossy(&verify.stdout).into_owned()
    })?;

    let sim = run(&load("blackout.scn"));
    ensure(events(&sim, "alice", "payment_failed") == 1, || {
        "transfer was not blocked".into()
    })?;
    ensure(sim.sessions[0].receiver != ReceiverState::Owned, || {
        "bob received a slow coin".into()
    })?;
    ensure(events(&sim, "alice", "collect_slow") == 1, || {
        "slow coin not collected".into()
    })?;
    ensure(sim.tokens("alice") == amount("1000.00"), || {
        format!("alice tokens {}", sim.tokens("alice"))
    })?;
    Ok(String::from("6 mined blocks at 12 bits verified; blackout blocks transfer and collect_slow_coin settles"))
}

/// Each byte position is flipped with every mask.
const MASKS: [u8; 3] = [0x01, 0x80, 0xff];

fn mutation_suite() -> Verdict {
    let bytes = std::fs::read(golden_path("chain5.chain")).map_err(|e| e.to_string())?;
    let trust =
        parse_trust(&std::fs::read_to_string(golden_path("trust.txt")).map_err(|e| e.to_string())?)
            .map_err(|(_, e)| e)?;
    let golden = CoinChain::from_canonical_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(golden.len() == 5, || {
        format!("golden chain has {} entries", golden.len())
    })?;
    let (fresh, _) = golden_chain();
    ensure(fresh == golden, || "golden chain is stale".into())?;
    let now = golden.tip_timestamp();
    ensure(validate_chain(&golden, &trust, None, now).valid(), || {
        "golden chain invalid".into()
    })?;
    let mut undetected = Vec::new();
    let mut mutated = bytes.clone();
    for pos in 0..bytes.len() {
        for mask in MASKS {
            mutated[pos] = bytes[pos] ^ mask;
            let caught = match CoinChain::from_canonical_bytes(&mutated) {
                Err(_) => true,
                Ok(chain) => !validate_chain(&chain, &trust, None, now).valid(),
            };
            if !caught {
                undetected.push((pos, mask));
            }
        }
        mutated[pos] = bytes[pos];
    }
    ensure(undetected.is_empty(), || {
        format!("undetected mutations {undetected:?}")
    })?;
    Ok(format!(
        "{} mutations over {} bytes, all detected",
        bytes.len() * MASKS.len(),
        bytes.len()
    ))
}

fn determinism() -> Verdict {
    let path = scenario_path("lossy_channel.scn");
    let first = localcoin(&["run", path.to_str().unwrap()]);
    ensure(first.status.success() && !first.stdout.is_empty(), || {
        "run failed".into()
    })?;
    for i in 1..10 {
        let again = localcoin(&["run", path.to_str().unwrap()]);
        ensure(again.stdout == first.stdout, || format!("run {i} differs"))?;
    }
    Ok(format!(
        "10 runs, {} identical log bytes",
        first.stdout.len()
    ))
}

fn main() {
    let suite = Instant::now();
    let criteria: [Criterion; 9] = [
        ("happy path", happy_path),
        ("double-spend detection", double_spend),
        ("replay immunity", replay_immunity),
        ("repudiation totality", repudiation_totality),
        ("fork conservation", fork_conservation),
        ("longest-valid-chain claims", longest_chain_claims),
        ("dynamic chain", dynamic_chain),
        ("chain-integrity mutation suite", mutation_suite),
        ("determinism", determinism),
    ];
    let mut results = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        results.push((name, verdict, start.elapsed()));
    }
    let total = suite.elapsed();
    // The dynamic chain criterion also bounds the runtime of the whole suite.
    if let (_, Ok(_), _) = &results[6] {
        if total >= Duration::from_secs(60) {
            results[6].1 = Err(format!("suite took {total:?}"));
        }
    }
    let mut failed = 0;
    for (i, (name, verdict, elapsed)) in results.iter().enumerate() {
        let secs = elapsed.as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed, {:.1}s total",
        results.len() - failed,
        total.as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
