//! Sequential against parallel execution on the three data-parallel paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use trailchain::chain::verify_chain_with;
use trailchain::exec::Exec;
use trailchain::pkgbuild::parse_pkgbuild;
use trailchain::sim::{run, run_many, synth, Roster, SimConfig, TrailSpec};

fn config() -> SimConfig {
    SimConfig {
        master_seed: 1,
        users_per_trail: 4,
        trails: ["archlinux", "perl", "pypy", "ruby", "debian", "gentoo"]
            .iter()
            .map(|n| TrailSpec::new(n, (*n == "archlinux").then_some(".*")))
            .collect(),
        ..SimConfig::default()
    }
}

fn recipes(c: &mut Criterion) {
    let texts: Vec<String> = synth::generate_events(5, 2000, 0, 60).into_iter().map(|e| e.recipe_text).collect();
    let mut g = c.benchmark_group("parse_recipes");
    for exec in Exec::available() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &texts, |b, texts| {
            b.iter(|| exec.map(texts, |t| parse_pkgbuild(t).map(|r| r.checksum)))
        });
    }
    g.finish();
}

fn verification(c: &mut Criterion) {
    let cfg = config();
    let events = synth::generate_events(6, 1500, 1_546_300_800, 300);
    let blocks = run(&cfg, &events).expect("replay").chain.into_blocks();
    let scheme = Roster::new(&cfg).scheme();
    let mut g = c.benchmark_group("verify_chain");
    g.sample_size(10);
    for exec in Exec::available() {
        g.bench_function(exec.name(), |b| b.iter(|| black_box(verify_chain_with(&blocks, &scheme, exec))));
    }
    g.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let cfg = config();
    let events = synth::generate_events(7, 200, 1_546_300_800, 900);
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("seed_sweep");
    g.sample_size(10);
    for exec in Exec::available() {
        g.bench_function(exec.name(), |b| b.iter(|| run_many(&cfg, &events, &seeds, exec)));
    }
    g.finish();
}

criterion_group!(benches, recipes, verification, seed_sweep);
criterion_main!(benches);
