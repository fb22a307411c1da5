use alloc::string::ToString;
use alloc::vec;

use super::*;
use crate::chain::MiningPolicy;
use crate::testkit::{keys, pay, World};
use crate::wallet::{CoinStatus, HardwareKey, Wallet, WalletError};

const HUNDRED: u64 = 10_000;

fn world() -> World {
    World::new(CentralConfig::default())
}

fn burn(
    world: &mut World,
    w: &Wallet,
    chain: &CoinChain,
    now: u64,
) -> Result<Amount, InstitutionError> {
    let challenge = world.central.issue_challenge(w.person_vk());
    let proof = BurnProof {
        challenge_id: challenge.id,
        signature: w.sign_burn(&challenge, &chain.coin_id()),
    };
    world
        .central
        .burn_coin(chain, w.person_vk(), &proof, Timestamp(now))
}

fn only_chain(w: &Wallet) -> CoinChain {
    assert_eq!(w.coins().len(), 1);
    w.coins().values().next().unwrap().chain.clone()
}

#[test]
fn cash_out_cold_coin() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let supply = world.central.money_supply();
    let chains = world
        .central
        .cash_out(
            &world.bank,
            alice.person_cert(),
            alice.wallet_cert(),
            Amount::from_minor(HUNDRED),
            CoinRequest::Cold,
            Timestamp(5),
        )
        .unwrap();
    assert_eq!(chains.len(), 1);
    let c = &chains[0];
    assert_eq!(c.value(), Amount::from_minor(HUNDRED));
    assert_eq!(c.kind(), CoinKind::Cold);
    assert_eq!(c.serial(), "C000001");
    assert_eq!(c.len(), 2);
    assert!(validate_chain(c, world.central.trust(), None, Timestamp(5)).valid());
    assert_eq!(
        current_holder(c).unwrap().holder.person(),
        Some(alice.person_vk())
    );
    assert_eq!(
        world.central.accounts().tokens_of(&alice.person_vk()),
        Amount::ZERO
    );
    assert_eq!(world.central.money_supply(), supply);
    alice.receive_coin(c.clone(), Timestamp(5)).unwrap();
}

#[test]
fn cash_out_hot_deadlines() {
    let mut world = world();
    let alice = world.wallet("alice", HUNDRED);
    let chains = world
        .central
        .cash_out(
            &world.bank,
            alice.person_cert(),
            alice.wallet_cert(),
            Amount::from_minor(HUNDRED),
            CoinRequest::Hot,
            Timestamp(100),
        )
        .unwrap();
    let exp = Timestamp(100 + 30 * DAY);
    assert_eq!(
        chains[0].kind(),
        CoinKind::Hot {
            expiration: exp,
            claim_deadline: exp.plus(7 * DAY)
        }
    );
}

#[test]
fn cash_out_errors() {
    let mut world = world();
    let alice = world.wallet("alice", HUNDRED);
    let (pc, wc) = (alice.person_cert().clone(), alice.wallet_cert().clone());
    let cash = |world: &mut World, minor: u64| {
        world.central.cash_out(
            &world.bank,
            &pc,
            &wc,
            Amount::from_minor(minor),
            CoinRequest::Cold,
            Timestamp(1),
        )
    };
    assert_eq!(
        cash(&mut world, 0).unwrap_err(),
        InstitutionError::NonPositive
    );
    assert!(matches!(
        cash(&mut world, HUNDRED + 1),
        Err(InstitutionError::InsufficientTokens { .. })
    ));
    world.central.open_account(
        alice.person_vk(),
        world.bank.vk(),
        Amount::from_minor(10_000_000),
    );
    assert!(matches!(
        cash(&mut world, 17 * 50_000),
        Err(InstitutionError::TooManyCoins {
            needed: 17,
            cap: 16
        })
    ));
}

#[test]
fn cash_out_splits_above_threshold() {
    let mut world = world();
    let alice = world.wallet("alice", 120_000);
    let chains = world
        .central
        .cash_out(
            &world.bank,
            alice.person_cert(),
            alice.wallet_cert(),
            Amount::from_minor(120_000),
            CoinRequest::Cold,
            Timestamp(1),
        )
        .unwrap();
    let values: Vec<u64> = chains.iter().map(|c| c.value().minor()).collect();
    assert_eq!(values, vec![50_000, 50_000, 20_000]);
    let serials: Vec<&str> = chains.iter().map(|c| c.serial()).collect();
    assert_eq!(serials, vec!["C000001", "C000002", "C000003"]);
}

#[test]
fn foreign_bank_customer_refused() {
    let mut world = world();
    let alice = world.wallet("alice", HUNDRED);
    let other_keys = keys("other-bank");
    let other = Bank::new(
        "other",
        other_keys.clone(),
        world.central.certify_bank(other_keys.vk),
        vec![world.oem.vk()],
    );
    let res = world.central.cash_out(
        &other,
        alice.person_cert(),
        alice.wallet_cert(),
        Amount::from_minor(1),
        CoinRequest::Cold,
        Timestamp(1),
    );
    assert_eq!(res.unwrap_err(), InstitutionError::ForeignCustomer);
}

#[test]
fn unattested_hardware_refused() {
    let world = world();
    let hw = HardwareKey::with_attestation([4; 32], Signature([0; 64]));
    let res = Wallet::provision(
        hw,
        keys("mallory"),
        &world.bank,
        world.central.trust().clone(),
        [0; 32],
    );
    assert!(matches!(
        res,
        Err(WalletError::Institution(InstitutionError::Attestation))
    ));
}

#[test]
fn upload_moves_ownership() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    pay(&mut alice, &mut bob, HUNDRED, 1, 20).unwrap();
    let batch = alice.upload_batch();
    assert_eq!(batch.len(), 1);
    assert_eq!(
        world.central.upload_chain(&batch[0], Timestamp(30)),
        Ok(bob.person_vk())
    );
    let dump = world.central.registry().dump();
    assert_eq!(
        dump.trim(),
        alloc::format!("C000001 outstanding {} 100.00 cold", bob.person_vk())
    );
    let history = world
        .central
        .ownership_history(&batch[0].coin_id())
        .unwrap();
    assert_eq!(
        history,
        vec![world.bank.vk(), alice.person_vk(), bob.person_vk()]
    );
}

#[test]
fn upload_rejects_tampering_and_withheld_tips() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    let invoice = bob
        .create_invoice(Amount::from_minor(HUNDRED), 1, Timestamp(20))
        .unwrap();
    let proposal = alice.prepare_payment(&invoice, Timestamp(20)).unwrap();
    let crate::protocol::Payload::ChainTransfer(p) = &proposal.payload else {
        panic!()
    };
    assert_eq!(
        world.central.upload_chain(&p.chains[0], Timestamp(30)),
        Err(InstitutionError::Withheld)
    );

    let mut bad = only_chain(&alice);
    bad.genesis.value = Amount::from_minor(HUNDRED + 1);
    assert!(matches!(
        world.central.upload_chain(&bad, Timestamp(30)),
        Err(InstitutionError::Invalid(_))
    ));
    let mut bad = only_chain(&alice);
    bad.genesis.serial = "C999999".into();
    assert!(matches!(
        world.central.upload_chain(&bad, Timestamp(30)),
        Err(InstitutionError::UnknownSerial(_))
    ));
    let mut bad = only_chain(&alice);
    bad.blocks[0].content.timestamp = Timestamp(11);
    assert!(matches!(
        world.central.upload_chain(&bad, Timestamp(30)),
        Err(InstitutionError::Invalid(_))
    ));
}

#[test]
fn cloned_wallet_double_spend_flagged() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    let mut carol = world.wallet("carol", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    let mut twin = alice.clone_storage();
    pay(&mut alice, &mut bob, HUNDRED, 1, 20).unwrap();
    pay(&mut twin, &mut carol, HUNDRED, 1, 21).unwrap();

    world
        .central
        .upload_chain(&only_chain(&bob), Timestamp(30))
        .unwrap();
    let err = world
        .central
        .upload_chain(&only_chain(&carol), Timestamp(31))
        .unwrap_err();
    assert!(
        matches!(err, InstitutionError::Conflict { ref serial, .. } if serial == "C000001"),
        "{err}"
    );
    let family = world.central.registry().family("C000001").unwrap();
    assert_eq!(family.status(), SerialStatus::ClaimPending);
    assert_eq!(family.uploads.len(), 2);
    assert!(family.evidence[0].contains("divergent"));
    assert_eq!(
        burn(&mut world, &bob, &only_chain(&bob), 40),
        Err(InstitutionError::ClaimPending)
    );
}

#[test]
fn repudiated_transfer_extension_flagged() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    let invoice = bob
        .create_invoice(Amount::from_minor(HUNDRED), 1, Timestamp(20))
        .unwrap();
    let proposal = alice.prepare_payment(&invoice, Timestamp(20)).unwrap();
    let approval = bob.receive_proposal(&proposal, Timestamp(20)).unwrap();
    let reveal = alice.reveal_secret(&approval).unwrap();
    let crate::protocol::Payload::Approval(a) = &approval.payload else {
        panic!()
    };
    // Bob repudiates by timeout while a copy of his storage completes the transfer.
    let mut twin = bob.clone_storage();
    let delivery = bob.expire_incoming(&a.payment).unwrap();
    twin.finalize_receive(&reveal).unwrap();
    alice.apply_delivery(&delivery).unwrap();

    world
        .central
        .upload_chain(&only_chain(&alice), Timestamp(30))
        .unwrap();
    let mut carol = world.wallet("carol", 0);
    pay(&mut twin, &mut carol, HUNDRED, 1, 31).unwrap();
    let err = world
        .central
        .upload_chain(&twin.upload_batch()[0], Timestamp(32))
        .unwrap_err();
    assert!(matches!(err, InstitutionError::Conflict { .. }));
}

#[test]
fn burn_credits_holder_once() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    pay(&mut alice, &mut bob, 6_000, 1, 20).unwrap();
    let supply = world.central.money_supply();

    let bobs = only_chain(&bob);
    // Alice no longer holds the coin.
    assert_eq!(
        burn(&mut world, &alice, &bobs, 30),
        Err(InstitutionError::NotHolder)
    );
    assert_eq!(
        burn(&mut world, &bob, &bobs, 30),
        Ok(Amount::from_minor(6_000))
    );
    assert_eq!(
        world.central.accounts().tokens_of(&bob.person_vk()),
        Amount::from_minor(6_000)
    );
    assert_eq!(world.central.money_supply(), supply);
    assert_eq!(
        burn(&mut world, &bob, &bobs, 31),
        Err(InstitutionError::AlreadyBurned)
    );

    let change = alice.coins_with_status(CoinStatus::Owned);
    let change = alice.coin(&change[0]).unwrap().chain.clone();
    assert_eq!(
        burn(&mut world, &alice, &change, 32),
        Ok(Amount::from_minor(4_000))
    );
    let family = world.central.registry().family("C000001").unwrap();
    assert_eq!(family.status(), SerialStatus::Burned);
    assert_eq!(world.central.money_supply(), supply);
}

#[test]
fn burn_of_fork_mother_refused() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    let mother = only_chain(&alice);
    let mut twin = alice.clone_storage();
    pay(&mut alice, &mut bob, 6_000, 1, 20).unwrap();
    world
        .central
        .upload_chain(&only_chain(&bob), Timestamp(25))
        .unwrap();
    assert_eq!(
        burn(&mut world, &twin, &mother, 30),
        Err(InstitutionError::NotALeaf)
    );
    let _ = twin.upload_batch();
}

#[test]
fn challenges_are_single_use() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    let chain = only_chain(&alice);
    let challenge = world.central.issue_challenge(alice.person_vk());
    let proof = BurnProof {
        challenge_id: challenge.id,
        signature: alice.sign_burn(&challenge, &chain.coin_id()),
    };
    let bad = BurnProof {
        challenge_id: challenge.id,
        signature: Signature([1; 64]),
    };
    assert_eq!(
        world
            .central
            .burn_coin(&chain, alice.person_vk(), &bad, Timestamp(20)),
        Err(InstitutionError::BadProof)
    );
    assert_eq!(
        world
            .central
            .burn_coin(&chain, alice.person_vk(), &proof, Timestamp(20)),
        Err(InstitutionError::StaleChallenge)
    );

    let challenge = world.central.issue_challenge(alice.person_vk());
    let proof = BurnProof {
        challenge_id: challenge.id,
        signature: alice.sign_burn(&challenge, &chain.coin_id()),
    };
    assert!(world
        .central
        .burn_coin(&chain, alice.person_vk(), &proof, Timestamp(20))
        .is_ok());
    assert_eq!(
        world
            .central
            .burn_coin(&chain, alice.person_vk(), &proof, Timestamp(21)),
        Err(InstitutionError::StaleChallenge)
    );
}

#[test]
fn lost_wallet_claim_after_deadline() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    let mut bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Hot, 10);
    pay(&mut alice, &mut bob, HUNDRED, 1, 20).unwrap();
    world
        .central
        .upload_chain(&alice.upload_batch()[0], Timestamp(30))
        .unwrap();
    drop(bob);

    let deadline = world
        .central
        .registry()
        .family("C000001")
        .unwrap()
        .kind
        .claim_deadline()
        .unwrap();
    assert!(matches!(
        world
            .central
            .resolve_claims("C000001", Timestamp(deadline.0 - 1)),
        Err(InstitutionError::DeadlineNotReached(_))
    ));
    assert_eq!(
        world.central.claimable_serials(deadline),
        vec!["C000001".to_string()]
    );
    let bob_vk = keys("bob/person").vk;
    assert_eq!(
        world.central.resolve_claims("C000001", deadline),
        Ok(ClaimDecision::Credited {
            owner: bob_vk,
            value: Amount::from_minor(HUNDRED)
        })
    );
    assert_eq!(
        world.central.accounts().tokens_of(&bob_vk),
        Amount::from_minor(HUNDRED)
    );
    assert_eq!(
        world.central.registry().family("C000001").unwrap().status(),
        SerialStatus::Burned
    );
    assert_eq!(
        world.central.resolve_claims("C000001", deadline),
        Err(InstitutionError::AlreadyBurned)
    );
}

#[test]
fn claim_without_uploads_parks() {
    let mut world = world();
    let mut alice = world.wallet("alice", HUNDRED);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Hot, 10);
    let deadline = world
        .central
        .registry()
        .family("C000001")
        .unwrap()
        .kind
        .claim_deadline()
        .unwrap();
    assert_eq!(
        world.central.resolve_claims("C000001", deadline),
        Ok(ClaimDecision::Parked)
    );
    assert_eq!(
        world.central.registry().family("C000001").unwrap().status(),
        SerialStatus::ClaimPending
    );

    let mut cold = world.wallet("carol", HUNDRED);
    world.cash_out(&mut cold, HUNDRED, CoinRequest::Cold, 10);
    assert_eq!(
        world.central.resolve_claims("C000002", deadline),
        Err(InstitutionError::NotHot)
    );
}

#[test]
fn slow_collection_requires_slow_coin() {
    let config = CentralConfig {
        mining: Some(MiningPolicy {
            base_bits: 4,
            max_backlog: 3,
            ..MiningPolicy::default()
        }),
        ..CentralConfig::default()
    };
    let mut world = World::new(config);
    let mut alice = world.wallet("alice", HUNDRED);
    let bob = world.wallet("bob", 0);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 0);
    let chain = only_chain(&alice);
    let collect = |world: &mut World, w: &Wallet, now: u64| {
        let challenge = world.central.issue_challenge(w.person_vk());
        let proof = BurnProof {
            challenge_id: challenge.id,
            signature: w.sign_burn(&challenge, &chain.coin_id()),
        };
        world
            .central
            .collect_slow_coin(&chain, w.person_vk(), &proof, Timestamp(now))
    };
    assert_eq!(
        collect(&mut world, &alice, 20),
        Err(InstitutionError::NotSlow)
    );
    assert_eq!(
        collect(&mut world, &bob, 100),
        Err(InstitutionError::NotHolder)
    );
    assert_eq!(
        collect(&mut world, &alice, 100),
        Ok(Amount::from_minor(HUNDRED))
    );
}

#[test]
fn key_rotation_keeps_old_coins_valid() {
    let mut world = world();
    let mut alice = world.wallet("alice", 2 * HUNDRED);
    world.cash_out(&mut alice, HUNDRED, CoinRequest::Cold, 10);
    world.central.rotate_key(keys("central-2"));
    let chain = only_chain(&alice);
    assert!(validate_chain(&chain, world.central.trust(), None, Timestamp(20)).valid());
    assert_eq!(
        burn(&mut world, &alice, &chain, 20),
        Ok(Amount::from_minor(HUNDRED))
    );
}
