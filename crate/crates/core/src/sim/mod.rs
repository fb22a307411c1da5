//! Deterministic discrete-event simulation of the offline payment protocol.
//!
//! Actors only interact through serialized messages on a faulty channel.
//! Every random choice comes from one ChaCha stream seeded by
//! [`Scenario::seed`], so a scenario and seed fix the event log byte for byte.

mod scenario;

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub use scenario::{
    Action, ChannelConfig, Fault, FaultRule, PersonSpec, Scenario, ScenarioError, Step,
};

use crate::amount::{Amount, Timestamp};
use crate::crypto::{self, seed_from_label, KeyPair, PublicKey};
use crate::encoding::Canonical;
use crate::institutions::{Bank, BurnProof, CentralBank, ClaimDecision, CoinRequest, Manufacturer};
use crate::protocol::{Message, MessageClass, Payload, PaymentId};
use crate::wallet::{
    export_repudiation_string, import_repudiation_string, CoinStatus, HardwareKey, ReceiveOutcome,
    Wallet, WalletError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenderState {
    Idle,
    Proposed,
    AwaitApproval,
    Revealed,
    Done,
    Timeout,
    Repudiated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverState {
    Invoiced,
    Evaluating,
    Approved,
    AwaitReveal,
    Owned,
    RepudiationSent,
    /// The invoice got no proposal before the timeout.
    Expired,
}

impl SenderState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            SenderState::Done | SenderState::Timeout | SenderState::Repudiated
        )
    }
}

impl ReceiverState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ReceiverState::Owned | ReceiverState::RepudiationSent | ReceiverState::Expired
        )
    }
}

/// One scripted payment with both parties' protocol state.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: usize,
    pub from: String,
    pub to: String,
    pub amount: Amount,
    pub payment: Option<PaymentId>,
    pub sender: SenderState,
    pub receiver: ReceiverState,
    /// Every state either side passed through, in order.
    pub sender_trace: Vec<SenderState>,
    pub receiver_trace: Vec<ReceiverState>,
    sender_gen: u64,
    receiver_gen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time: u64,
    pub seq: u64,
    pub actor: String,
    pub event: String,
    pub detail: String,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} actor={} event={} detail={}",
            self.time, self.actor, self.event, self.detail
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Sender,
    Receiver,
}

#[derive(Debug, Clone)]
enum Event {
    Step(usize),
    Deliver {
        to: String,
        session: usize,
        bytes: Vec<u8>,
    },
    Timeout {
        session: usize,
        role: Role,
        gen: u64,
    },
    Mine,
}

struct Queued {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: the heap pops the earliest (time, sequence) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone)]
struct Sent {
    class: MessageClass,
    to: String,
    session: usize,
    bytes: Vec<u8>,
}

/// A finished run: the event log and every actor's final state.
pub struct Simulation {
    pub log: Vec<LogRecord>,
    pub wallets: BTreeMap<String, Wallet>,
    pub lost: BTreeSet<String>,
    pub central: CentralBank,
    pub bank: Bank,
    pub sessions: Vec<Session>,
    names: BTreeMap<PublicKey, String>,
}

impl Simulation {
    pub fn wallet(&self, name: &str) -> Option<&Wallet> {
        self.wallets.get(name)
    }

    pub fn tokens(&self, name: &str) -> Amount {
        self.person_vk(name)
            .map(|vk| self.central.accounts().tokens_of(&vk))
            .unwrap_or_default()
    }

    pub fn person_vk(&self, name: &str) -> Option<PublicKey> {
        self.names
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(vk, _)| *vk)
    }

    pub fn name_of(&self, vk: &PublicKey) -> Option<&str> {
        self.names.get(vk).map(String::as_str)
    }

    /// The log as text, one record per line.
    pub fn render_log(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

struct Engine {
    scenario: Scenario,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    rng: ChaCha20Rng,
    log: Vec<LogRecord>,
    wallets: BTreeMap<String, Wallet>,
    lost: BTreeSet<String>,
    blackout: BTreeMap<String, u64>,
    central: CentralBank,
    bank: Bank,
    oem: Manufacturer,
    sessions: Vec<Session>,
    sent: Vec<Sent>,
    class_counts: BTreeMap<MessageClass, usize>,
    names: BTreeMap<PublicKey, String>,
}

fn label_keys(label: &str) -> KeyPair {
    KeyPair::from_seed(seed_from_label(label))
}

/// Runs `scenario` to quiescence.
pub fn run_scenario(scenario: &Scenario) -> Result<Simulation, ScenarioError> {
    scenario.check()?;
    let mut engine = Engine::new(scenario.clone());
    engine.run();
    Ok(Simulation {
        log: engine.log,
        wallets: engine.wallets,
        lost: engine.lost,
        central: engine.central,
        bank: engine.bank,
        sessions: engine.sessions,
        names: engine.names,
    })
}

impl Engine {
    fn new(scenario: Scenario) -> Engine {
        let central = CentralBank::new(label_keys("central"), scenario.central.clone());
        let oem = Manufacturer::new(label_keys("manufacturer"));
        let bank_keys = label_keys("bank");
        let bank = Bank::new(
            "bank",
            bank_keys.clone(),
            central.certify_bank(bank_keys.vk),
            alloc::vec![oem.vk()],
        );
        let mut names = BTreeMap::new();
        names.insert(bank.vk(), String::from("bank"));
        Engine {
            rng: ChaCha20Rng::seed_from_u64(scenario.seed),
            scenario,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            log: Vec::new(),
            wallets: BTreeMap::new(),
            lost: BTreeSet::new(),
            blackout: BTreeMap::new(),
            central,
            bank,
            oem,
            sessions: Vec::new(),
            sent: Vec::new(),
            class_counts: BTreeMap::new(),
            names,
        }
    }

    fn log(&mut self, actor: &str, event: &str, detail: String) {
        self.log.push(LogRecord {
            time: self.now,
            seq: self.log.len() as u64,
            actor: String::from(actor),
            event: String::from(event),
            detail,
        });
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            at,
            seq: self.seq,
            event,
        });
    }

    fn wallet_seed(&self, name: &str) -> [u8; 32] {
        crypto::digest_parts(&[
            b"localcoin/sim/rng",
            &self.scenario.seed.to_be_bytes(),
            name.as_bytes(),
        ])
        .0
    }

    fn name_of(&self, vk: &PublicKey) -> String {
        self.names
            .get(vk)
            .cloned()
            .unwrap_or_else(|| vk.to_string())
    }

    fn run(&mut self) {
        for p in self.scenario.people.clone() {
            let hw =
                HardwareKey::manufacture(&self.oem, seed_from_label(&format!("{}/wallet", p.name)));
            let person = label_keys(&format!("{}/person", p.name));
            let trust = self.central.trust().clone();
            let seed = self.wallet_seed(&p.name);
            let mut w = Wallet::provision(hw, person, &self.bank, trust, seed)
                .expect("sim wallets are attested");
            w.set_mining_policy(self.scenario.central.mining.clone());
            self.central
                .open_account(w.person_vk(), self.bank.vk(), p.tokens);
            self.names.insert(w.person_vk(), p.name.clone());
            self.log(
                &p.name,
                "provisioned",
                format!("tokens={} person={}", p.tokens, w.person_vk()),
            );
            self.wallets.insert(p.name.clone(), w);
        }
        for (i, step) in self.scenario.steps.clone().iter().enumerate() {
            self.schedule(step.at, Event::Step(i));
        }
        let horizon = self.scenario.horizon();
        if let Some(policy) = &self.scenario.central.mining {
            let interval = policy.interval.max(1);
            let mut t = interval;
            while t <= horizon {
                self.schedule(t, Event::Mine);
                t += interval;
            }
        }
        while let Some(q) = self.queue.pop() {
            self.now = q.at;
            match q.event {
                Event::Step(i) => {
                    let action = self.scenario.steps[i].action.clone();
                    self.step(action);
                }
                Event::Deliver { to, session, bytes } => self.deliver(&to, session, &bytes),
                Event::Timeout { session, role, gen } => self.timeout(session, role, gen),
                Event::Mine => self.mine(),
            }
        }
    }

    // ---- channel ----

    fn send(&mut self, from: &str, to: &str, session: usize, msg: &Message) {
        let class = msg.kind().class();
        let bytes = msg.to_canonical_bytes();
        self.sent.push(Sent {
            class,
            to: String::from(to),
            session,
            bytes: bytes.clone(),
        });
        self.log(
            from,
            "send",
            format!(
                "kind={} to={} session={} bytes={}",
                msg.kind(),
                to,
                session,
                bytes.len()
            ),
        );
        let count = {
            let c = self.class_counts.entry(class).or_default();
            *c += 1;
            *c
        };
        let ch = self.scenario.channel.clone();
        let draws = [
            self.rng.gen_bool(ch.drop),
            self.rng.gen_bool(ch.tamper),
            self.rng.gen_bool(ch.duplicate),
        ];
        let ruled = self
            .scenario
            .faults
            .iter()
            .find(|r| r.class == class && r.nth.is_none_or(|n| n == count))
            .copied();
        let offset = ruled.and_then(|r| r.offset);
        let fault = ruled.map(|r| r.fault).or(if draws[0] {
            Some(Fault::Drop)
        } else if draws[1] {
            Some(Fault::Tamper)
        } else if draws[2] {
            Some(Fault::Duplicate)
        } else {
            None
        });
        match fault {
            Some(Fault::Drop) => {
                self.log(
                    "channel",
                    "dropped",
                    format!("kind={} to={} session={}", msg.kind(), to, session),
                );
            }
            Some(Fault::Tamper) => {
                let mut bytes = bytes;
                let pos = self.rng.gen_range(0..bytes.len());
                let mask: u8 = self.rng.gen_range(1..=255);
                let (pos, mask) = match offset {
                    Some(o) => (o % bytes.len(), 0x01),
                    None => (pos, mask),
                };
                bytes[pos] ^= mask;
                self.log(
                    "channel",
                    "tampered",
                    format!(
                        "kind={} to={} session={} offset={}",
                        msg.kind(),
                        to,
                        session,
                        pos
                    ),
                );
                self.transmit(to, session, bytes);
            }
            Some(Fault::Duplicate) => {
                self.log(
                    "channel",
                    "duplicated",
                    format!("kind={} to={} session={}", msg.kind(), to, session),
                );
                self.transmit(to, session, bytes.clone());
                self.transmit(to, session, bytes);
            }
            None => self.transmit(to, session, bytes),
        }
    }

    fn transmit(&mut self, to: &str, session: usize, bytes: Vec<u8>) {
        let ch = &self.scenario.channel;
        let (lo, hi) = (ch.delay_min, ch.delay_max.max(ch.delay_min));
        let delay = self.rng.gen_range(lo..=hi);
        self.schedule(
            self.now + delay,
            Event::Deliver {
                to: String::from(to),
                session,
                bytes,
            },
        );
    }

    // ---- session bookkeeping ----

    fn set_sender(&mut self, session: usize, state: SenderState, timeout: bool) {
        let s = &mut self.sessions[session];
        s.sender = state;
        s.sender_trace.push(state);
        s.sender_gen += 1;
        let (gen, from) = (s.sender_gen, s.from.clone());
        self.log(
            &from,
            "sender_state",
            format!("session={session} state={state:?}"),
        );
        if timeout {
            self.schedule(
                self.now + self.scenario.timeout,
                Event::Timeout {
                    session,
                    role: Role::Sender,
                    gen,
                },
            );
        }
    }

    fn set_receiver(&mut self, session: usize, state: ReceiverState, timeout: bool) {
        let s = &mut self.sessions[session];
        s.receiver = state;
        s.receiver_trace.push(state);
        s.receiver_gen += 1;
        let (gen, to) = (s.receiver_gen, s.to.clone());
        self.log(
            &to,
            "receiver_state",
            format!("session={session} state={state:?}"),
        );
        if timeout {
            self.schedule(
                self.now + self.scenario.timeout,
                Event::Timeout {
                    session,
                    role: Role::Receiver,
                    gen,
                },
            );
        }
    }

    // ---- message handling ----

    fn deliver(&mut self, to: &str, session: usize, bytes: &[u8]) {
        if self.lost.contains(to) || !self.wallets.contains_key(to) {
            self.log(
                "channel",
                "undeliverable",
                format!("to={to} session={session}"),
            );
            return;
        }
        let msg = match Message::from_canonical_bytes(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.log(
                    to,
                    "rejected",
                    format!("kind=unknown session={session} reason=malformed ({e})"),
                );
                return;
            }
        };
        self.log(
            to,
            "received",
            format!("kind={} session={session}", msg.kind()),
        );
        match &msg.payload {
            Payload::Invoice(_) => self.on_invoice(to, session, &msg),
            Payload::ChainTransfer(_) => self.on_proposal(to, session, &msg),
            Payload::Approval(_) => self.on_approval(to, session, &msg),
            Payload::Rejection(_) => self.on_rejection(to, session, &msg),
            Payload::SecretReveal(_) => self.on_reveal(to, session, &msg),
            Payload::RepudiationDelivery(_) => self.on_delivery(to, session, &msg),
            Payload::Confirmation(_) => self.on_confirmation(to, session, &msg),
        }
    }

    fn ignored(&mut self, actor: &str, session: usize, msg: &Message, why: &str) {
        self.log(
            actor,
            "ignored",
            format!("kind={} session={session} reason={why}", msg.kind()),
        );
    }

    fn rejected(&mut self, actor: &str, session: usize, msg: &Message, why: impl fmt::Display) {
        self.log(
            actor,
            "rejected",
            format!("kind={} session={session} reason={why}", msg.kind()),
        );
    }

    fn on_invoice(&mut self, me: &str, session: usize, msg: &Message) {
        if self.sessions[session].sender != SenderState::Idle {
            return self.ignored(me, session, msg, "unexpected");
        }
        let now = Timestamp(self.now);
        let result = self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .prepare_payment(msg, now);
        match result {
            Ok(proposal) => {
                self.sessions[session].payment = Some(msg.payload.payment());
                self.set_sender(session, SenderState::Proposed, false);
                let to = self.sessions[session].to.clone();
                self.send(me, &to, session, &proposal);
                self.set_sender(session, SenderState::AwaitApproval, true);
            }
            Err(
                e @ (WalletError::WrongParty
                | WalletError::Certificate
                | WalletError::DuplicatePayment(_)),
            ) => self.rejected(me, session, msg, e),
            Err(e) => self.log(
                me,
                "payment_failed",
                format!("session={session} reason={e}"),
            ),
        }
    }

    fn on_proposal(&mut self, me: &str, session: usize, msg: &Message) {
        let live = self.sessions[session].receiver == ReceiverState::Invoiced;
        if live {
            self.set_receiver(session, ReceiverState::Evaluating, false);
        }
        let now = Timestamp(self.now);
        let reply = self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .receive_proposal(msg, now);
        let Ok(reply) = reply else {
            return self.rejected(me, session, msg, "malformed");
        };
        let from = self.sessions[session].from.clone();
        match &reply.payload {
            Payload::Approval(a) => {
                let coins = a.tips.len();
                self.log(me, "approved", format!("session={session} coins={coins}"));
                self.set_receiver(session, ReceiverState::Approved, false);
                self.send(me, &from, session, &reply);
                self.set_receiver(session, ReceiverState::AwaitReveal, true);
            }
            Payload::Rejection(r) => {
                let detail = format!(
                    "kind={} session={session} reason={} repudiations={}",
                    msg.kind(),
                    r.reason,
                    r.repudiations.len()
                );
                self.log(me, "rejected", detail);
                if live {
                    self.set_receiver(session, ReceiverState::RepudiationSent, false);
                }
                self.send(me, &from, session, &reply);
            }
            _ => unreachable!("receive_proposal answers with an approval or a rejection"),
        }
    }

    fn on_approval(&mut self, me: &str, session: usize, msg: &Message) {
        if self.sessions[session].sender != SenderState::AwaitApproval {
            return self.ignored(me, session, msg, "unexpected");
        }
        let result = self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .reveal_secret(msg);
        match result {
            Ok(reveal) => {
                let to = self.sessions[session].to.clone();
                self.send(me, &to, session, &reveal);
                self.set_sender(session, SenderState::Revealed, true);
            }
            Err(e) => self.rejected(me, session, msg, e),
        }
    }

    fn on_rejection(&mut self, me: &str, session: usize, msg: &Message) {
        let Payload::Rejection(r) = &msg.payload else {
            unreachable!()
        };
        if self.sessions[session].sender != SenderState::AwaitApproval {
            return self.ignored(me, session, msg, "unexpected");
        }
        if r.reason.is_counter() && r.repudiations.is_empty() {
            // A replay or duplicate was refused; the genuine answer may follow.
            return self.ignored(me, session, msg, "counter");
        }
        match self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .handle_rejection(msg)
        {
            Ok(applied) => {
                self.log(
                    me,
                    "payment_rejected",
                    format!(
                        "session={session} reason={} repudiations_applied={applied}",
                        r.reason
                    ),
                );
                self.set_sender(session, SenderState::Timeout, false);
            }
            Err(e) => self.rejected(me, session, msg, e),
        }
    }

    fn on_reveal(&mut self, me: &str, session: usize, msg: &Message) {
        if self.sessions[session].receiver != ReceiverState::AwaitReveal {
            return self.ignored(me, session, msg, "unexpected");
        }
        let result = self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .finalize_receive(msg);
        let from = self.sessions[session].from.clone();
        match result {
            Ok(ReceiveOutcome::Accepted(conf)) => {
                let amount = self.sessions[session].amount;
                self.log(
                    me,
                    "payment_received",
                    format!("session={session} from={from} value={amount}"),
                );
                self.set_receiver(session, ReceiverState::Owned, false);
                self.send(me, &from, session, &conf);
            }
            Ok(ReceiveOutcome::Repudiated(delivery)) => {
                self.rejected(me, session, msg, "secret mismatch");
                for e in self.wallets[me].released_repudiations().to_vec() {
                    self.log(me, "repudiation_string", export_repudiation_string(&e));
                }
                self.set_receiver(session, ReceiverState::RepudiationSent, false);
                self.send(me, &from, session, &delivery);
            }
            Err(e) => self.rejected(me, session, msg, e),
        }
    }

    fn on_delivery(&mut self, me: &str, session: usize, msg: &Message) {
        let result = self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .apply_delivery(msg);
        match result {
            Ok(0) => self.ignored(me, session, msg, "nothing to restore"),
            Ok(n) => {
                self.log(
                    me,
                    "repudiation_applied",
                    format!("session={session} coins={n}"),
                );
                if let Some(p) = self.sessions[session].payment {
                    self.wallets
                        .get_mut(me)
                        .expect("delivered")
                        .expire_outgoing(&p);
                }
                self.set_sender(session, SenderState::Repudiated, false);
            }
            Err(e) => self.rejected(me, session, msg, e),
        }
    }

    fn on_confirmation(&mut self, me: &str, session: usize, msg: &Message) {
        if self.sessions[session].sender != SenderState::Revealed {
            return self.ignored(me, session, msg, "unexpected");
        }
        match self
            .wallets
            .get_mut(me)
            .expect("delivered")
            .confirm_outgoing(msg)
        {
            Ok(()) => {
                let amount = self.sessions[session].amount;
                self.log(
                    me,
                    "payment_sent",
                    format!("session={session} value={amount}"),
                );
                self.set_sender(session, SenderState::Done, false);
            }
            Err(e) => self.rejected(me, session, msg, e),
        }
    }

    fn timeout(&mut self, session: usize, role: Role, gen: u64) {
        let s = &self.sessions[session];
        let (from, to, payment) = (s.from.clone(), s.to.clone(), s.payment);
        match role {
            Role::Sender if gen == s.sender_gen && !s.sender.is_terminal() => {
                let state = s.sender;
                self.log(
                    &from,
                    "timeout",
                    format!("session={session} state={state:?}"),
                );
                if let (Some(p), Some(w)) = (payment, self.wallets.get_mut(&from)) {
                    w.expire_outgoing(&p);
                }
                let next = if state == SenderState::Revealed {
                    SenderState::Done
                } else {
                    SenderState::Timeout
                };
                self.set_sender(session, next, false);
            }
            Role::Receiver if gen == s.receiver_gen && !s.receiver.is_terminal() => {
                let state = s.receiver;
                self.log(&to, "timeout", format!("session={session} state={state:?}"));
                let Some(w) = self
                    .wallets
                    .get_mut(&to)
                    .filter(|_| !self.lost.contains(&to))
                else {
                    return;
                };
                match state {
                    ReceiverState::AwaitReveal => {
                        let p = payment.expect("a proposal fixed the payment");
                        let delivery = w.expire_incoming(&p).expect("pending payment");
                        for e in w.released_repudiations().to_vec() {
                            self.log(&to, "repudiation_string", export_repudiation_string(&e));
                        }
                        self.set_receiver(session, ReceiverState::RepudiationSent, false);
                        self.send(&to, &from, session, &delivery);
                    }
                    _ => {
                        if let Some(p) = self.sessions[session].payment {
                            w.cancel_invoice(p.base);
                        }
                        self.set_receiver(session, ReceiverState::Expired, false);
                    }
                }
            }
            _ => {}
        }
    }

    fn mine(&mut self) {
        let now = Timestamp(self.now);
        let names: Vec<String> = self.wallets.keys().cloned().collect();
        for name in names {
            if self.lost.contains(&name)
                || self
                    .blackout
                    .get(&name)
                    .is_some_and(|until| self.now < *until)
            {
                continue;
            }
            let w = self.wallets.get_mut(&name).expect("listed");
            let slow_before = w.coins_with_status(CoinStatus::Slow);
            let mined = w.mine_tick(now);
            let slow_after = w.coins_with_status(CoinStatus::Slow);
            let mut per_coin: BTreeMap<String, usize> = BTreeMap::new();
            for (id, _) in &mined {
                *per_coin.entry(id.to_string()).or_default() += 1;
            }
            for (coin, n) in per_coin {
                self.log(&name, "mined", format!("coin={coin} blocks={n}"));
            }
            for id in slow_after.iter().filter(|id| !slow_before.contains(id)) {
                self.log(&name, "slow", format!("coin={id}"));
            }
        }
    }

    // ---- scripted steps ----

    fn step(&mut self, action: Action) {
        let now = Timestamp(self.now);
        match action {
            Action::CashOut { who, amount, hot } => {
                if self.lost.contains(&who) {
                    return self.log(&who, "cash_out_failed", String::from("reason=wallet lost"));
                }
                let w = self.wallets.get_mut(&who).expect("checked");
                let request = if hot {
                    CoinRequest::Hot
                } else {
                    CoinRequest::Cold
                };
                match self.central.cash_out(
                    &self.bank,
                    w.person_cert(),
                    w.wallet_cert(),
                    amount,
                    request,
                    now,
                ) {
                    Ok(chains) => {
                        let n = chains.len();
                        for c in chains {
                            w.receive_coin(c, now).expect("freshly delivered coin");
                        }
                        let kind = if hot { "hot" } else { "cold" };
                        self.log(
                            &who,
                            "cash_out",
                            format!("coins={n} value={amount} kind={kind}"),
                        );
                    }
                    Err(e) => self.log(&who, "cash_out_failed", format!("reason={e}")),
                }
            }
            Action::Pay {
                from,
                to,
                amount,
                slots,
            } => {
                let id = self.sessions.len();
                self.sessions.push(Session {
                    id,
                    from: from.clone(),
                    to: to.clone(),
                    amount,
                    payment: None,
                    sender: SenderState::Idle,
                    receiver: ReceiverState::Invoiced,
                    sender_trace: alloc::vec![SenderState::Idle],
                    receiver_trace: Vec::new(),
                    sender_gen: 0,
                    receiver_gen: 0,
                });
                self.log(
                    &to,
                    "pay_request",
                    format!("session={id} from={from} value={amount} slots={slots}"),
                );
                if self.lost.contains(&to) || self.lost.contains(&from) {
                    self.set_receiver(id, ReceiverState::Expired, false);
                    return self.log(
                        &to,
                        "payment_failed",
                        format!("session={id} reason=wallet lost"),
                    );
                }
                match self
                    .wallets
                    .get_mut(&to)
                    .expect("checked")
                    .create_invoice(amount, slots, now)
                {
                    Ok(invoice) => {
                        self.sessions[id].payment = Some(invoice.payload.payment());
                        self.set_receiver(id, ReceiverState::Invoiced, true);
                        self.send(&to, &from, id, &invoice);
                    }
                    Err(e) => {
                        self.set_receiver(id, ReceiverState::Expired, false);
                        self.log(&to, "payment_failed", format!("session={id} reason={e}"));
                    }
                }
            }
            Action::Upload { who } => self.upload(&who),
            Action::Burn { who } => self.settle(&who, false),
            Action::CollectSlow { who } => self.settle(&who, true),
            Action::Lose { who } => {
                self.lost.insert(who.clone());
                self.log(&who, "lost", String::from("wallet destroyed"));
            }
            Action::Claims => self.claims(),
            Action::Blackout { who, ticks } => {
                self.blackout.insert(who.clone(), self.now + ticks);
                self.log(&who, "blackout", format!("until={}", self.now + ticks));
            }
            Action::Clone { who, name } => {
                let twin = self.wallets[&who].clone_storage();
                self.wallets.insert(name.clone(), twin);
                self.log("adversary", "cloned", format!("wallet={who} as={name}"));
            }
            Action::Replay { class } => {
                let Some(sent) = self.sent.iter().rev().find(|s| s.class == class).cloned() else {
                    return self.log(
                        "adversary",
                        "replay_failed",
                        format!("class={} reason=nothing recorded", class.name()),
                    );
                };
                self.log(
                    "adversary",
                    "replayed",
                    format!(
                        "class={} to={} session={}",
                        class.name(),
                        sent.to,
                        sent.session
                    ),
                );
                self.transmit(&sent.to, sent.session, sent.bytes);
            }
            Action::Recover { receiver, sender } => self.recover(&receiver, &sender),
        }
    }

    fn upload(&mut self, who: &str) {
        if self.lost.contains(who) {
            return self.log(who, "upload_failed", String::from("reason=wallet lost"));
        }
        let now = Timestamp(self.now);
        let batch = self.wallets.get_mut(who).expect("checked").upload_batch();
        for chain in batch {
            let id = chain.coin_id();
            match self.central.upload_chain(&chain, now) {
                Ok(owner) => {
                    let owner = self.name_of(&owner);
                    self.log(
                        who,
                        "uploaded",
                        format!("coin={id} owner={owner} value={}", chain.value()),
                    )
                }
                Err(e) => self.log(who, "upload_refused", format!("coin={id} reason={e}")),
            }
        }
    }

    fn settle(&mut self, who: &str, slow: bool) {
        if self.lost.contains(who) {
            return self.log(who, "burn_failed", String::from("reason=wallet lost"));
        }
        let now = Timestamp(self.now);
        let status = if slow {
            CoinStatus::Slow
        } else {
            CoinStatus::Owned
        };
        self.wallets
            .get_mut(who)
            .expect("checked")
            .refresh_schedule(now);
        let ids = self.wallets[who].coins_with_status(status);
        for id in ids {
            let w = &self.wallets[who];
            let vk = w.person_vk();
            let chain = w.coin(&id).expect("listed").chain.clone();
            let challenge = self.central.issue_challenge(vk);
            let proof = BurnProof {
                challenge_id: challenge.id,
                signature: w.sign_burn(&challenge, &id),
            };
            let result = if slow {
                self.central.collect_slow_coin(&chain, vk, &proof, now)
            } else {
                self.central.burn_coin(&chain, vk, &proof, now)
            };
            let event = if slow { "collect_slow" } else { "burn_credit" };
            match result {
                Ok(value) => {
                    self.wallets.get_mut(who).expect("checked").remove_coin(&id);
                    let tokens = self.central.accounts().tokens_of(&vk);
                    self.log(
                        who,
                        event,
                        format!("coin={id} value={value} tokens={tokens}"),
                    );
                }
                Err(e) => self.log(who, "burn_refused", format!("coin={id} reason={e}")),
            }
        }
    }

    fn claims(&mut self) {
        let now = Timestamp(self.now);
        for serial in self.central.claimable_serials(now) {
            match self.central.resolve_claims(&serial, now) {
                Ok(ClaimDecision::Credited { owner, value }) => {
                    let owner = self.name_of(&owner);
                    self.log(
                        "central",
                        "claim_credit",
                        format!("serial={serial} owner={owner} value={value}"),
                    );
                }
                Ok(ClaimDecision::Parked) => {
                    self.log("central", "claim_parked", format!("serial={serial}"))
                }
                Err(e) => self.log(
                    "central",
                    "claim_refused",
                    format!("serial={serial} reason={e}"),
                ),
            }
        }
    }

    /// Out-of-band delivery of every repudiation `receiver` has released,
    /// as printable strings.
    fn recover(&mut self, receiver: &str, sender: &str) {
        let entries = match self.wallets.get(receiver) {
            Some(w) => w.released_repudiations().to_vec(),
            None => Vec::new(),
        };
        let mut restored = 0;
        for e in entries {
            let s = export_repudiation_string(&e);
            let Ok(entry) = import_repudiation_string(&s) else {
                continue;
            };
            let Some(w) = self.wallets.get_mut(sender) else {
                continue;
            };
            if let Ok(id) = w.apply_repudiation(&entry) {
                restored += 1;
                self.log(sender, "recovered", format!("coin={id} string={s}"));
            }
        }
        if restored > 0 {
            for i in 0..self.sessions.len() {
                let s = &self.sessions[i];
                if s.from == sender
                    && s.to == receiver
                    && s.receiver == ReceiverState::RepudiationSent
                    && s.sender != SenderState::Repudiated
                {
                    self.set_sender(i, SenderState::Repudiated, false);
                }
            }
        } else {
            self.log(sender, "recover_none", format!("from={receiver}"));
        }
    }
}

#[cfg(test)]
mod tests;
