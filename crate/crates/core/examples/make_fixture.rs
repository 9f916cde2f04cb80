//! Regenerates `tests/fixtures/events.jsonl`.
//!
//! cargo run -p trailchain --example make_fixture -- crates/core/tests/fixtures/events.jsonl

use std::path::PathBuf;

use trailchain::ingest::write_events;
use trailchain::sim::synth::generate_events;

pub const FIXTURE_SEED: u64 = 2019;
pub const FIXTURE_EVENTS: usize = 500;
/// 2019-01-01T00:00:00Z.
pub const FIXTURE_START: u64 = 1_546_300_800;
pub const FIXTURE_MAX_GAP: u64 = 2880;

fn main() {
    let out = std::env::args_os().nth(1).map(PathBuf::from).unwrap_or_else(|| "events.jsonl".into());
    let events = generate_events(FIXTURE_SEED, FIXTURE_EVENTS, FIXTURE_START, FIXTURE_MAX_GAP);
    if let Err(e) = write_events(&out, &events) {
        eprintln!("{e}");
        std::process::exit(1);
    }
    eprintln!("wrote {} events to {}", events.len(), out.display());
}
