//! Wallet persistence.
//!
//! A snapshot is the canonical encoding of every wallet field followed by a
//! sealed section. Only the private key seeds and the RNG seed are sealed,
//! with ChaCha20-Poly1305 under the snapshot key; the clear part is bound
//! as associated data, so editing either half fails to restore.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use chacha20poly1305::aead::{Aead, KeyInit, Payload as AeadPayload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{
    CoinRecord, CoinStatus, HardwareKey, Incoming, Outgoing, OutgoingState, Reservation, Wallet,
};
use crate::amount::{Amount, Timestamp};
use crate::chain::{Block, CoinChain, CoinId, MiningPolicy, SignedHash};
use crate::crypto::{self, Certificate, KeyPair, PublicKey, Signature, TrustStore};
use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};
use crate::protocol::{Invoice, PaymentId, RepudiationEntry};

const SNAPSHOT_TAG: &[u8] = b"localcoin/wallet-snapshot/v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("sealed keys do not open under this snapshot key")]
    Seal,
    #[error("sealed keys do not match the recorded public keys")]
    KeyMismatch,
}

fn u64_list(enc: &mut Encoder, items: impl ExactSizeIterator<Item = u64>) {
    enc.u64(items.len() as u64);
    for v in items {
        enc.u64(v);
    }
}

fn read_u64_list(dec: &mut Decoder<'_>) -> Result<Vec<u64>, DecodeError> {
    let count = dec.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        out.push(dec.u64()?);
    }
    Ok(out)
}

fn encode_policy(enc: &mut Encoder, p: &MiningPolicy) {
    enc.u64(p.base_bits.into());
    enc.u64(p.tiers.len() as u64);
    for (min, bits) in &p.tiers {
        enc.u64(min.minor()).u64((*bits).into());
    }
    enc.u64(p.interval)
        .u64(p.catch_up_pace.into())
        .u64(p.max_backlog);
}

fn small(dec: &mut Decoder<'_>) -> Result<u32, DecodeError> {
    let v = dec.u64()?;
    u32::try_from(v).or_else(|_| dec.invalid("32-bit value"))
}

fn decode_policy(dec: &mut Decoder<'_>) -> Result<MiningPolicy, DecodeError> {
    let base_bits = small(dec)?;
    let count = dec.u64()?;
    let mut tiers = Vec::new();
    for _ in 0..count {
        tiers.push((Amount::from_minor(dec.u64()?), small(dec)?));
    }
    Ok(MiningPolicy {
        base_bits,
        tiers,
        interval: dec.u64()?,
        catch_up_pace: small(dec)?,
        max_backlog: dec.u64()?,
    })
}

const STATUSES: [CoinStatus; 6] = [
    CoinStatus::Owned,
    CoinStatus::PendingOutgoing,
    CoinStatus::TransferredAwaitingUpload,
    CoinStatus::PendingIncoming,
    CoinStatus::ErrorFlagged,
    CoinStatus::Slow,
];

impl Canonical for CoinRecord {
    fn encode(&self, enc: &mut Encoder) {
        let tag = STATUSES
            .iter()
            .position(|s| *s == self.status)
            .expect("listed") as u8;
        enc.nested(&self.chain)
            .u8(tag)
            .opt_nested(self.escrow.as_ref())
            .opt_nested(self.standby.as_ref());
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let chain: CoinChain = dec.nested()?;
        let Some(status) = STATUSES.get(dec.u8()? as usize).copied() else {
            return dec.invalid("coin status");
        };
        let escrow: Option<Block> = dec.opt_nested()?;
        let standby: Option<RepudiationEntry> = dec.opt_nested()?;
        if escrow.is_some() != (status == CoinStatus::PendingOutgoing)
            || standby.is_some() != (status == CoinStatus::PendingIncoming)
        {
            return dec.invalid("coin record");
        }
        Ok(CoinRecord {
            chain,
            status,
            escrow,
            standby,
        })
    }
}

struct Keyed<K, V>(K, V);

impl<K: Canonical, V: Canonical> Canonical for Keyed<K, V> {
    fn encode(&self, enc: &mut Encoder) {
        enc.nested(&self.0).nested(&self.1);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Keyed(dec.nested()?, dec.nested()?))
    }
}

impl Canonical for Outgoing {
    fn encode(&self, enc: &mut Encoder) {
        let state = match self.state {
            OutgoingState::Proposed => 0,
            OutgoingState::Revealed => 1,
            OutgoingState::Closed => 2,
        };
        enc.nested(&self.invoice).list(&self.coins).u8(state);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let invoice: Invoice = dec.nested()?;
        let coins = dec.list()?;
        let state = match dec.u8()? {
            0 => OutgoingState::Proposed,
            1 => OutgoingState::Revealed,
            2 => OutgoingState::Closed,
            _ => return dec.invalid("payment state"),
        };
        Ok(Outgoing {
            invoice,
            coins,
            state,
        })
    }
}

impl Canonical for Incoming {
    fn encode(&self, enc: &mut Encoder) {
        let replaced: Vec<_> = self
            .replaced
            .iter()
            .map(|(id, r)| Keyed(id.clone(), r.clone()))
            .collect();
        enc.nested(&self.sender)
            .list(&self.coins)
            .list(&self.tips)
            .list(&replaced);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let sender = dec.nested()?;
        let coins = dec.list()?;
        let tips = dec.list()?;
        let replaced = dec
            .list::<Keyed<CoinId, CoinRecord>>()?
            .into_iter()
            .map(|k| (k.0, k.1))
            .collect();
        Ok(Incoming {
            sender,
            coins,
            tips,
            replaced,
        })
    }
}

fn invalid(what: &'static str) -> SnapshotError {
    SnapshotError::Decode(DecodeError::Invalid { offset: 0, what })
}

fn nonce_for(clear: &[u8]) -> [u8; 12] {
    let d = crypto::digest_parts(&[SNAPSHOT_TAG, b"/nonce", clear]);
    let mut n = [0u8; 12];
    n.copy_from_slice(&d.0[..12]);
    n
}

impl Wallet {
    fn encode_clear(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.field(SNAPSHOT_TAG)
            .nested(&self.hardware.keys.vk)
            .nested(&self.hardware.attestation)
            .nested(&self.person.vk)
            .nested(&self.wallet_cert)
            .nested(&self.person_cert)
            .nested(&self.bank_cert)
            .nested(&self.trust);
        match &self.mining {
            Some(p) => {
                enc.u8(1);
                encode_policy(&mut enc, p);
            }
            None => {
                enc.u8(0);
            }
        }
        enc.u64(self.rpmb_counter);
        enc.u64(self.reservations.len() as u64);
        for (base, r) in &self.reservations {
            enc.u64(*base)
                .u64(r.amount.minor())
                .u64(r.slots)
                .u8(r.open.into());
        }
        u64_list(&mut enc, self.consumed.iter().copied());
        let coins: Vec<_> = self
            .coins
            .iter()
            .map(|(k, v)| Keyed(k.clone(), v.clone()))
            .collect();
        let outgoing: Vec<_> = self
            .outgoing
            .iter()
            .map(|(k, v)| Keyed(*k, v.clone()))
            .collect();
        let incoming: Vec<_> = self
            .incoming
            .iter()
            .map(|(k, v)| Keyed(*k, v.clone()))
            .collect();
        let accepted: Vec<_> = self.accepted.iter().copied().collect();
        let repudiated: Vec<_> = self.repudiated.iter().copied().collect();
        enc.list(&coins)
            .list(&outgoing)
            .list(&incoming)
            .list(&self.released)
            .list(&accepted)
            .list(&repudiated)
            .field(&self.rng.get_word_pos().to_be_bytes())
            .u64(self.clock.0);
        enc.finish()
    }

    /// Serializes the whole wallet. Private key material is sealed under
    /// `key`.
    pub fn snapshot(&self, key: &[u8; 32]) -> Vec<u8> {
        let clear = self.encode_clear();
        let mut secrets = Vec::with_capacity(96);
        secrets.extend_from_slice(&self.hardware.keys.sk.seed());
        secrets.extend_from_slice(&self.person.sk.seed());
        secrets.extend_from_slice(&self.rng_seed);
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        let sealed = cipher
            .encrypt(
                Nonce::from_slice(&nonce_for(&clear)),
                AeadPayload {
                    msg: &secrets,
                    aad: &clear,
                },
            )
            .expect("in-memory encryption");
        let mut enc = Encoder::new();
        enc.field(&clear).field(&sealed);
        enc.finish()
    }

    /// Rebuilds a wallet from [`Wallet::snapshot`] output. The invoice
    /// counter is raised to `counter_floor`, the value the replay-protected
    /// store reports, so restoring an old snapshot cannot rewind it.
    pub fn restore(
        bytes: &[u8],
        key: &[u8; 32],
        counter_floor: u64,
    ) -> Result<Wallet, SnapshotError> {
        let mut outer = Decoder::new(bytes);
        let clear = outer.field()?;
        let sealed = outer.field()?;
        outer.finish()?;
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
        let secrets = cipher
            .decrypt(
                Nonce::from_slice(&nonce_for(clear)),
                AeadPayload {
                    msg: sealed,
                    aad: clear,
                },
            )
            .map_err(|_| SnapshotError::Seal)?;
        if secrets.len() != 96 {
            return Err(SnapshotError::Seal);
        }
        let seed =
            |i: usize| -> [u8; 32] { secrets[i * 32..(i + 1) * 32].try_into().expect("32 bytes") };

        let mut dec = Decoder::new(clear);
        if dec.field()? != SNAPSHOT_TAG {
            return Err(invalid("snapshot tag"));
        }
        let wallet_vk: PublicKey = dec.nested()?;
        let attestation: Signature = dec.nested()?;
        let person_vk: PublicKey = dec.nested()?;
        let wallet_keys = KeyPair::from_seed(seed(0));
        let person = KeyPair::from_seed(seed(1));
        if wallet_keys.vk != wallet_vk || person.vk != person_vk {
            return Err(SnapshotError::KeyMismatch);
        }
        let wallet_cert: Certificate = dec.nested()?;
        let person_cert: Certificate = dec.nested()?;
        let bank_cert: Certificate = dec.nested()?;
        let trust: TrustStore = dec.nested()?;
        let mining = match dec.u8()? {
            0 => None,
            1 => Some(decode_policy(&mut dec)?),
            _ => return Err(invalid("mining flag")),
        };
        let rpmb_counter = dec.u64()?.max(counter_floor);
        let mut reservations = BTreeMap::new();
        for _ in 0..dec.u64()? {
            let base = dec.u64()?;
            let amount = Amount::from_minor(dec.u64()?);
            let slots = dec.u64()?;
            let open = dec.u8()? != 0;
            reservations.insert(
                base,
                Reservation {
                    amount,
                    slots,
                    open,
                },
            );
        }
        let consumed: BTreeSet<u64> = read_u64_list(&mut dec)?.into_iter().collect();
        let coins = dec
            .list::<Keyed<CoinId, CoinRecord>>()?
            .into_iter()
            .map(|k| (k.0, k.1))
            .collect();
        let outgoing = dec
            .list::<Keyed<PaymentId, Outgoing>>()?
            .into_iter()
            .map(|k| (k.0, k.1))
            .collect();
        let incoming = dec
            .list::<Keyed<PaymentId, Incoming>>()?
            .into_iter()
            .map(|k| (k.0, k.1))
            .collect();
        let released = dec.list()?;
        let accepted: BTreeSet<SignedHash> = dec.list::<SignedHash>()?.into_iter().collect();
        let repudiated: BTreeSet<SignedHash> = dec.list::<SignedHash>()?.into_iter().collect();
        let word_pos = u128::from_be_bytes(dec.fixed()?);
        let clock = Timestamp(dec.u64()?);
        dec.finish()?;
        if consumed.iter().any(|c| *c >= rpmb_counter) {
            return Err(invalid("consumed invoice serial"));
        }

        let rng_seed = seed(2);
        let mut rng = ChaCha20Rng::from_seed(rng_seed);
        rng.set_word_pos(word_pos);
        Ok(Wallet {
            hardware: HardwareKey {
                keys: wallet_keys,
                attestation,
            },
            person,
            wallet_cert,
            person_cert,
            bank_cert,
            trust,
            mining,
            rpmb_counter,
            reservations,
            consumed,
            coins,
            outgoing,
            incoming,
            released,
            accepted,
            repudiated,
            rng_seed,
            rng,
            clock,
        })
    }
}
