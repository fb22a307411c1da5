//! Shared fixtures for unit tests.

use alloc::vec::Vec;

use crate::amount::{Amount, Timestamp};
use crate::chain::CoinId;
use crate::crypto::{seed_from_label, KeyPair};
use crate::institutions::{Bank, CentralBank, CentralConfig, CoinRequest, Manufacturer};
use crate::protocol::Message;
use crate::wallet::{HardwareKey, ReceiveOutcome, Wallet, WalletError};

pub struct World {
    pub central: CentralBank,
    pub oem: Manufacturer,
    pub bank: Bank,
}

pub fn keys(label: &str) -> KeyPair {
    KeyPair::from_seed(seed_from_label(label))
}

impl World {
    pub fn new(config: CentralConfig) -> World {
        let central = CentralBank::new(keys("central"), config);
        let oem = Manufacturer::new(keys("oem"));
        let bank_keys = keys("bank");
        let cert = central.certify_bank(bank_keys.vk);
        let bank = Bank::new("bank", bank_keys, cert, alloc::vec![oem.vk()]);
        World { central, oem, bank }
    }

    pub fn wallet(&mut self, name: &str, tokens: u64) -> Wallet {
        let hw =
            HardwareKey::manufacture(&self.oem, seed_from_label(&alloc::format!("{name}/wallet")));
        let person = keys(&alloc::format!("{name}/person"));
        let mut w = Wallet::provision(
            hw,
            person,
            &self.bank,
            self.central.trust().clone(),
            seed_from_label(&alloc::format!("{name}/rng")),
        )
        .expect("attested wallet");
        w.set_mining_policy(self.central.config.mining.clone());
        self.central
            .open_account(w.person_vk(), self.bank.vk(), Amount::from_minor(tokens));
        w
    }

    pub fn cash_out(
        &mut self,
        w: &mut Wallet,
        minor: u64,
        request: CoinRequest,
        now: u64,
    ) -> Vec<CoinId> {
        let chains = self
            .central
            .cash_out(
                &self.bank,
                w.person_cert(),
                w.wallet_cert(),
                Amount::from_minor(minor),
                request,
                Timestamp(now),
            )
            .expect("cash out");
        chains
            .into_iter()
            .map(|c| w.receive_coin(c, Timestamp(now)).expect("receive"))
            .collect()
    }
}

/// Every message of one payment, in protocol order.
pub struct Exchange {
    pub proposal: Message,
    pub answer: Message,
    pub reveal: Option<Message>,
    pub outcome: Option<ReceiveOutcome>,
}

/// Runs a payment with no faults.
pub fn pay(
    from: &mut Wallet,
    to: &mut Wallet,
    minor: u64,
    slots: u64,
    now: u64,
) -> Result<Exchange, WalletError> {
    let now = Timestamp(now);
    let invoice = to.create_invoice(Amount::from_minor(minor), slots, now)?;
    let proposal = from.prepare_payment(&invoice, now)?;
    let answer = to.receive_proposal(&proposal, now)?;
    let mut ex = Exchange {
        proposal,
        answer,
        reveal: None,
        outcome: None,
    };
    if let Ok(reveal) = from.reveal_secret(&ex.answer) {
        let outcome = to.finalize_receive(&reveal)?;
        if let ReceiveOutcome::Accepted(confirmation) = &outcome {
            from.confirm_outgoing(confirmation)?;
        }
        ex.reveal = Some(reveal);
        ex.outcome = Some(outcome);
    }
    Ok(ex)
}
