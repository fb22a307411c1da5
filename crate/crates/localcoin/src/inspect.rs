//! Human-readable chain dumps: one stanza per block, `field: value` lines.

use std::fmt::Write;

use localcoin_core::chain::{current_holder, Block, BlockVariant, CoinChain, Holder, HolderStatus};
use localcoin_core::crypto::Certificate;

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| String::from("-"), |v| v.to_string())
}

fn cert(out: &mut String, name: &str, c: &Certificate) {
    let _ = writeln!(
        out,
        "  {name}: {} ({}, issued by {})",
        c.subject_vk,
        c.role.name(),
        c.issuer_vk
    );
}

fn block(out: &mut String, index: usize, b: &Block) {
    let c = &b.content;
    let variant = b.variant();
    let _ = writeln!(
        out,
        "block {index} {}",
        variant.map_or("unknown", BlockVariant::name)
    );
    let _ = writeln!(out, "  prev_hash: {}", c.prev.hash);
    let _ = writeln!(out, "  prev_signature: {}", c.prev.signature);
    let _ = writeln!(out, "  timestamp: {}", c.timestamp);
    cert(out, "holder", &c.holder_cert);
    cert(out, "wallet", &c.wallet_cert);
    cert(out, "bank", &c.bank_cert);
    let _ = writeln!(out, "  child_value: {}", opt(c.child_value));
    let _ = writeln!(out, "  invoice_serial: {}", opt(c.invoice_serial));
    let _ = writeln!(out, "  mined_nonce: {}", opt(c.mined_nonce));
    let secret = match (&c.secret_nonce, variant) {
        (Some(s), _) => hex::encode(s.0),
        (None, Some(BlockVariant::Transfer)) => String::from("[redacted]"),
        (None, _) => String::from("-"),
    };
    let _ = writeln!(out, "  secret_nonce: {secret}");
    let _ = writeln!(out, "  hash: {}", b.hash);
    let _ = writeln!(out, "  signature: {}", b.seal.primary);
    let _ = writeln!(out, "  person_signature: {}", opt(b.seal.secondary));
    let _ = writeln!(out, "  repudiation: {}", opt(b.repudiation));
}

pub fn render_chain(chain: &CoinChain) -> String {
    let mut out = String::new();
    let g = &chain.genesis;
    let holder = match current_holder(chain) {
        Ok(view) => {
            let who = match view.holder {
                Holder::Bank(k) => format!("bank {k}"),
                Holder::Person(p) => format!("person {}", p.person),
            };
            let status = match view.status {
                HolderStatus::Minted => "minted",
                HolderStatus::Held => "held",
                HolderStatus::Repudiated => "repudiated",
                HolderStatus::AwaitingReveal { .. } => "awaiting reveal",
                HolderStatus::Transferred => "transferred",
            };
            format!("{who} ({status})")
        }
        Err(e) => format!("unknown ({e})"),
    };
    let _ = writeln!(out, "coin: {}", chain.coin_id());
    let _ = writeln!(out, "value: {}", chain.value());
    let _ = writeln!(out, "blocks: {}", chain.len());
    let _ = writeln!(out, "holder: {holder}");
    let _ = writeln!(out);
    let _ = writeln!(out, "block 0 genesis");
    let _ = writeln!(out, "  serial: {}", g.serial);
    let _ = writeln!(out, "  value: {}", g.value);
    let _ = writeln!(out, "  kind: {}", g.kind.name());
    let _ = writeln!(out, "  expiration: {}", opt(g.kind.expiration()));
    let _ = writeln!(out, "  claim_deadline: {}", opt(g.kind.claim_deadline()));
    let _ = writeln!(out, "  timestamp: {}", g.timestamp);
    let _ = writeln!(out, "  central: {}", g.central_vk);
    cert(&mut out, "bank", &g.bank_cert);
    let _ = writeln!(out, "  hash: {}", g.hash);
    let _ = writeln!(out, "  signature: {}", g.central_sig);
    for (i, b) in chain.blocks.iter().enumerate() {
        let _ = writeln!(out);
        block(&mut out, i + 1, b);
    }
    out
}
