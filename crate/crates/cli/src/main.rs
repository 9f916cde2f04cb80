//! `trailchain` command-line tool. Data goes to stdout, diagnostics to stderr.
//! Exit codes: 0 success, 1 validation or parse failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trailchain::chain::{parse_chain_lenient, scheme_for_chain, verify_chain_bytes, verify_lines_from, ChainState};
use trailchain::crypto::Digest;
use trailchain::ingest::{read_events, write_events};
use trailchain::pkgbuild::parse_pkgbuild;
use trailchain::sim::{emit_metrics, run, SimConfig};

#[derive(Parser)]
#[command(name = "trailchain", version, about = "Package-repository blockchain tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read an event file, drop malformed lines and write the sorted timeline.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a timeline into a chain file and metrics CSVs.
    Simulate {
        #[arg(long)]
        timeline: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Check every block of a chain file.
    Validate {
        #[arg(long)]
        chain: PathBuf,
    },
    /// Print one block, or the trail registry at the tip.
    Inspect {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, group = "selector")]
        block: Option<u64>,
        #[arg(long, group = "selector")]
        hash: Option<String>,
        #[arg(long, group = "selector")]
        trails: bool,
    },
    /// Recipe utilities.
    Pkgbuild {
        #[command(subcommand)]
        action: PkgbuildCommand,
    },
}

#[derive(Subcommand)]
enum PkgbuildCommand {
    /// Print the canonical form of a PKGBUILD.
    Parse { file: PathBuf },
}

const OK: u8 = 0;
const FAILURE: u8 = 1;
const USAGE: u8 = 2;

fn read(path: &Path) -> Result<Vec<u8>, u8> {
    fs::read(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        FAILURE
    })
}

fn ingest(events: &Path, out: &Path) -> Result<(), u8> {
    let log = read_events(events).map_err(|e| {
        eprintln!("{e}");
        FAILURE
    })?;
    for s in &log.skipped {
        eprintln!("skipped line {}: {}", s.line, s.reason);
    }
    write_events(out, &log.events).map_err(|e| {
        eprintln!("{e}");
        FAILURE
    })?;
    println!("{} events, {} skipped", log.events.len(), log.skipped.len());
    Ok(())
}

fn simulate(timeline: &Path, config: &Path, seed: u64, out: &Path, metrics: &Path) -> Result<(), u8> {
    let mut cfg = SimConfig::load(config).map_err(|e| {
        eprintln!("{e}");
        USAGE
    })?;
    cfg.master_seed = seed;
    let log = read_events(timeline).map_err(|e| {
        eprintln!("{e}");
        FAILURE
    })?;
    if !log.skipped.is_empty() {
        eprintln!("{} timeline lines skipped", log.skipped.len());
    }
    let result = run(&cfg, &log.events).map_err(|e| {
        eprintln!("simulation failed: {e}");
        FAILURE
    })?;
    fs::write(out, result.chain_file()).map_err(|e| {
        eprintln!("cannot write {}: {e}", out.display());
        FAILURE
    })?;
    emit_metrics(&result, metrics).map_err(|e| {
        eprintln!("{e}");
        FAILURE
    })?;
    println!("head {}", result.head());
    println!("blocks {}", result.chain.len());
    Ok(())
}

fn validate(chain: &Path) -> Result<(), u8> {
    let bytes = read(chain)?;
    let scheme = scheme_for_chain(&parse_chain_lenient(&bytes));
    let report = verify_chain_bytes(&bytes, &scheme);
    if report.is_valid() {
        let blocks = bytes.iter().filter(|c| **c == b'\n').count();
        println!("valid {blocks} blocks");
        return Ok(());
    }
    for v in &report.violations {
        println!("{v}");
    }
    if let Some(h) = report.invalid_from {
        eprintln!("chain invalid from height {h}");
    }
    Err(FAILURE)
}

fn inspect(chain: &Path, block: Option<u64>, hash: Option<String>, trails: bool) -> Result<(), u8> {
    let bytes = read(chain)?;
    let blocks = parse_chain_lenient(&bytes);
    if trails {
        let text = String::from_utf8_lossy(&bytes);
        let lines: Vec<&str> = text.lines().collect();
        let (report, state) = verify_lines_from(ChainState::default(), &lines, &scheme_for_chain(&blocks));
        for line in state.registry.summary_lines() {
            println!("{line}");
        }
        if let Some(h) = report.invalid_from {
            eprintln!("chain invalid from height {h}; registry shown up to height {}", h.saturating_sub(1));
            return Err(FAILURE);
        }
        return Ok(());
    }
    let found = match (block, hash) {
        (Some(h), _) => blocks.iter().find(|b| b.number == h),
        (None, Some(hex)) => {
            let digest = Digest::from_hex(&hex.to_ascii_lowercase()).map_err(|e| {
                eprintln!("{e}");
                USAGE
            })?;
            blocks.iter().find(|b| b.hash == digest)
        }
        (None, None) => {
            eprintln!("one of --block, --hash or --trails is required");
            return Err(USAGE);
        }
    };
    let Some(b) = found else {
        eprintln!("no such block");
        return Err(FAILURE);
    };
    let value = serde_json::to_value(b).expect("blocks serialize");
    println!("{}", serde_json::to_string_pretty(&value).expect("values serialize"));
    Ok(())
}

fn pkgbuild_parse(file: &Path) -> Result<(), u8> {
    let bytes = read(file)?;
    let text = String::from_utf8(bytes).map_err(|_| {
        eprintln!("{} is not UTF-8", file.display());
        FAILURE
    })?;
    let recipe = parse_pkgbuild(&text).map_err(|e| {
        eprintln!("{e}");
        FAILURE
    })?;
    println!("{}", recipe.to_canonical_string());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest { events, out } => ingest(&events, &out),
        Command::Simulate { timeline, config, seed, out, metrics } => {
            simulate(&timeline, &config, seed, &out, &metrics)
        }
        Command::Validate { chain } => validate(&chain),
        Command::Inspect { chain, block, hash, trails } => inspect(&chain, block, hash, trails),
        Command::Pkgbuild { action: PkgbuildCommand::Parse { file } } => pkgbuild_parse(&file),
    };
    ExitCode::from(outcome.err().unwrap_or(OK))
}
