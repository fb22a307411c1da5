#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use localcoin::parse_scenario;
use localcoin_core::chain::CoinChain;
use localcoin_core::crypto::TrustStore;
use localcoin_core::sim::{run_scenario, Scenario, Simulation};

pub fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn load(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    parse_scenario(&text).expect("well-formed scenario")
}

pub fn run(sc: &Scenario) -> Simulation {
    run_scenario(sc).expect("consistent scenario")
}

pub fn localcoin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_localcoin"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Carol's coin after the golden scenario, with the trust it verifies under.
pub fn golden_chain() -> (CoinChain, TrustStore) {
    let sim = run(&load("golden_chain.scn"));
    let carol = sim.wallet("carol").expect("carol");
    let rec = carol.coins().values().next().expect("carol holds the coin");
    (rec.chain.clone(), sim.central.trust().clone())
}

/// Compares `actual` with a checked-in golden file; `UPDATE_GOLDEN=1`
/// rewrites the file instead.
pub fn check_golden(name: &str, actual: &[u8]) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).expect("write golden");
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(
        expected == actual,
        "{} differs from the golden file",
        path.display()
    );
}
