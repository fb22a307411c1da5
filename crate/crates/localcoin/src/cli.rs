//! Command-line front end.
//!
//! Exit codes: 0 when the operation fully succeeded, 1 when a chain failed
//! verification, 2 for usage errors and unreadable or malformed inputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use localcoin_core::amount::Timestamp;
use localcoin_core::chain::{validate_chain, MiningPolicy};
use localcoin_core::sim::{run_scenario, Scenario, Simulation};

use crate::files::{read_chain, read_trust, write_chain, write_trust, FileError};
use crate::inspect::render_chain;
use crate::scenario::parse_scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "localcoin",
    version,
    about = "Offline digital cash on per-coin local chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Final sessions, balances and registry.
    Text,
    /// One `t=<tick> actor=<name> event=<kind> detail=<...>` record per line.
    LogLines,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file and print its event log.
    Run {
        scenario: PathBuf,
        /// Replaces the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "log-lines")]
        format: Format,
        /// Writes every wallet's coin chains and a trust file here.
        #[arg(long, value_name = "DIR")]
        chains_out: Option<PathBuf>,
    },
    /// Validate a chain file.
    Verify {
        chain: PathBuf,
        #[arg(long)]
        trust: PathBuf,
        /// Checks proof of work at this many leading zero bits.
        #[arg(long, value_name = "BITS")]
        difficulty: Option<u32>,
        /// Mining interval in ticks, used with --difficulty.
        #[arg(long, default_value_t = MiningPolicy::default().interval)]
        interval: u64,
        /// Validation time; defaults to the tip timestamp.
        #[arg(long)]
        now: Option<u64>,
    },
    /// Print a chain file block by block.
    Inspect { chain: PathBuf },
    /// Run a scenario and print the central registry.
    Registry {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "localcoin: {message}");
            EXIT_USAGE
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut sc = parse_scenario(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn simulate(path: &Path, seed: Option<u64>) -> Result<Simulation, String> {
    let sc = load_scenario(path, seed)?;
    run_scenario(&sc).map_err(|e| format!("{}: {e}", path.display()))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), String> {
    out.write_all(text.as_bytes())
        .map_err(|e| format!("writing output: {e}"))
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32, String> {
    match command {
        Command::Run {
            scenario,
            seed,
            format,
            chains_out,
        } => {
            let sim = simulate(&scenario, seed)?;
            if let Some(dir) = chains_out {
                export_chains(&sim, &dir).map_err(|e| e.to_string())?;
            }
            let text = match format {
                Format::LogLines => sim.render_log(),
                Format::Text => summary(&sim),
            };
            emit(out, &text)?;
            Ok(EXIT_OK)
        }
        Command::Verify {
            chain,
            trust,
            difficulty,
            interval,
            now,
        } => {
            let trust = read_trust(&trust).map_err(|e| e.to_string())?;
            let chain = match read_chain(&chain) {
                Ok(c) => c,
                Err(e @ FileError::Chain { .. }) => {
                    emit(out, &format!("invalid\n{e}\n"))?;
                    return Ok(EXIT_INVALID);
                }
                Err(e) => return Err(e.to_string()),
            };
            let policy = difficulty.map(|bits| MiningPolicy {
                interval,
                ..MiningPolicy::with_bits(bits)
            });
            let now = now.map_or_else(|| chain.tip_timestamp(), Timestamp);
            let report = validate_chain(&chain, &trust, policy.as_ref(), now);
            let mut text = format!("{}\n", if report.valid() { "valid" } else { "invalid" });
            for f in &report.failures {
                let _ = writeln!(text, "block {}: {}", f.index, f.code);
            }
            emit(out, &text)?;
            Ok(if report.valid() {
                EXIT_OK
            } else {
                EXIT_INVALID
            })
        }
        Command::Inspect { chain } => {
            let chain = read_chain(&chain).map_err(|e| e.to_string())?;
            emit(out, &render_chain(&chain))?;
            Ok(EXIT_OK)
        }
        Command::Registry { scenario, seed } => {
            let sim = simulate(&scenario, seed)?;
            emit(out, &sim.central.registry().dump())?;
            Ok(EXIT_OK)
        }
    }
}

fn summary(sim: &Simulation) -> String {
    let mut out = String::new();
    for s in &sim.sessions {
        let _ = writeln!(
            out,
            "session {} {} -> {} {} sender={:?} receiver={:?}",
            s.id, s.from, s.to, s.amount, s.sender, s.receiver
        );
    }
    for (name, w) in &sim.wallets {
        let lost = if sim.lost.contains(name) { " lost" } else { "" };
        let _ = writeln!(
            out,
            "actor {name} tokens={} coins={}{lost}",
            sim.tokens(name),
            w.owned_value()
        );
        for (id, rec) in w.coins() {
            let _ = writeln!(out, "  {id} {} {}", rec.chain.value(), rec.status.name());
        }
    }
    out.push_str("registry\n");
    for line in sim.central.registry().dump().lines() {
        let _ = writeln!(out, "  {line}");
    }
    out
}

/// Writes `trust.txt` and one `<actor>-<coin>.chain` file per held coin.
pub fn export_chains(sim: &Simulation, dir: &Path) -> Result<(), FileError> {
    fs::create_dir_all(dir).map_err(|source| FileError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_trust(&dir.join("trust.txt"), sim.central.trust())?;
    for (name, w) in &sim.wallets {
        if sim.lost.contains(name) {
            continue;
        }
        for (id, rec) in w.coins() {
            let file = format!("{name}-{}.chain", id.to_string().replace('~', "-"));
            write_chain(&dir.join(file), &rec.chain)?;
        }
    }
    Ok(())
}
