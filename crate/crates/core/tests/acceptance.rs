//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use trailchain::chain::{
    chain_file_string, make_genesis, scheme_for_chain, verify_chain, verify_chain_bytes, verify_lines_from,
    BlockPayload, Chain, ChainState,
};
use trailchain::consensus::update_popularity;
use trailchain::crypto::{
    hash_bytes, make_challenge, solve_challenge, Challenge, KeyPair, MockScheme, PrivateKey, SignatureScheme,
};
use trailchain::exec::Exec;
use trailchain::ingest::{read_events, PackageEvent};
use trailchain::model::{
    member_invite_message, member_remove_message, to_line, trail_request_message, vouch_message, Block, Identity,
    OpPayload, PackageRecord, PopularitySnapshot, TrailOp, TrailOpKind, VouchRecord,
};
use trailchain::pkgbuild::parse_pkgbuild;
use trailchain::pod::{prepare_delivery, restore_package, ConfirmOutcome, DownloadLedger};
use trailchain::sim::{run, schedule_vouch, stream, synth, Roster, SimConfig, SimResult, TrailSpec};
use trailchain::trails::TrailStatus;

/// Head of the fixture chain replayed with seed 42.
const GOLDEN_HEAD: &str = "8c836eb21a7f1e08034d5dca49eed54550778a27c86cf15dd9b876bc11cb3ce8";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn fixture_config() -> SimConfig {
    SimConfig::load(&fixture("fixture.toml")).expect("fixture config loads")
}

fn fixture_events() -> Vec<PackageEvent> {
    let log = read_events(&fixture("events.jsonl")).expect("fixture events load");
    assert!(log.skipped.is_empty());
    log.events
}

struct FixtureRun {
    result: SimResult,
    elapsed: Duration,
}

fn fixture_run() -> &'static FixtureRun {
    static RUN: OnceLock<FixtureRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = SimConfig { master_seed: 42, ..fixture_config() };
        let events = fixture_events();
        let start = Instant::now();
        let result = run(&cfg, &events).expect("fixture replay succeeds");
        FixtureRun { result, elapsed: start.elapsed() }
    })
}

/// Fixture trails and ranges, extended to 1000 blocks.
fn long_run() -> &'static SimResult {
    static RUN: OnceLock<SimResult> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = SimConfig { master_seed: 42, min_blocks: 1000, ..fixture_config() };
        run(&cfg, &fixture_events()).expect("long replay succeeds")
    })
}

fn small_config() -> SimConfig {
    SimConfig {
        users_per_trail: 2,
        trails: vec![
            TrailSpec::new("archlinux", Some(".*")),
            TrailSpec::new("perl", Some("perl")),
            TrailSpec::new("pypy", Some("py")),
            TrailSpec::new("ruby", Some("rb")),
            TrailSpec::new("fal", Some("fal")),
        ],
        ..SimConfig::default()
    }
}

const T0: u64 = 1_546_300_800;

// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let first = fixture_run();
    let head = first.result.head().to_hex();
    ensure!(head == GOLDEN_HEAD, "head {head} differs from golden {GOLDEN_HEAD}");
    ensure!(first.elapsed < Duration::from_secs(30), "replay took {:?}", first.elapsed);
    let cfg = SimConfig { master_seed: 42, ..fixture_config() };
    let again = run(&cfg, &fixture_events()).map_err(|e| e.to_string())?;
    ensure!(again.chain_file() == first.result.chain_file(), "second replay produced different bytes");
    Ok(format!("{} blocks, head {head}, replay {:.1}s", first.result.chain.len(), first.elapsed.as_secs_f64()))
}

fn self_validation() -> Outcome {
    let r = &fixture_run().result;
    let cfg = fixture_config();
    let report = verify_chain(r.chain.blocks(), &Roster::new(&cfg).scheme());
    ensure!(report.is_valid(), "fixture chain invalid: {:?}", report.violations.first());
    let file = r.chain_file().into_bytes();
    let standalone = verify_chain_bytes(&file, &scheme_for_chain(r.chain.blocks()));
    ensure!(standalone.is_valid(), "stand-alone check failed: {:?}", standalone.violations.first());

    // Mutation sweep over a 20-block chain.
    let small = SimConfig { master_seed: 42, min_blocks: 15, ..small_config() };
    small.validate().map_err(|e| e.to_string())?;
    let events = synth::generate_events(3, 30, T0, 600);
    let sweep = run(&small, &events).map_err(|e| e.to_string())?;
    let blocks = sweep.chain.blocks();
    ensure!(blocks.len() == 20, "sweep chain has {} blocks", blocks.len());
    let scheme = Roster::new(&small).scheme();
    let lines: Vec<String> = blocks.iter().map(to_line).collect();
    let mut states = vec![ChainState::default()];
    for b in blocks {
        let (rep, next) = states.last().unwrap().evaluate(b, &scheme, Exec::Sequential);
        ensure!(rep.is_valid(), "sweep chain block {} invalid", b.number);
        states.push(next);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut mutations = 0u64;
    let mut full_checks = 0u64;
    for (k, line) in lines.iter().enumerate() {
        let bytes = line.as_bytes();
        for p in 0..bytes.len() {
            let mut replacements = vec![bytes[p] ^ 0x01];
            if p % 7 == 0 {
                let r = loop {
                    let r = rng.gen::<u8>();
                    if r != bytes[p] && r != b'\n' {
                        break r;
                    }
                };
                replacements.push(r);
            }
            for value in replacements {
                mutations += 1;
                let mut m = bytes.to_vec();
                m[p] = value;
                let detected = match std::str::from_utf8(&m) {
                    Err(_) => true,
                    Ok(s) => verify_lines_from(states[k].clone(), &[s], &scheme).0.invalid_from == Some(k as u64),
                };
                ensure!(detected, "mutation at block {k} byte {p} went unnoticed");
                if p % 401 == 0 {
                    // Whole-file check: the chain is invalid from k, so k and every descendant are rejected.
                    let mut file = chain_file_string(blocks).into_bytes();
                    let offset: usize = lines[..k].iter().map(|l| l.len() + 1).sum();
                    file[offset + p] = value;
                    let rep = verify_chain_bytes(&file, &scheme);
                    ensure!(
                        rep.invalid_from == Some(k as u64),
                        "file mutation at {k}:{p} reported {:?}",
                        rep.invalid_from
                    );
                    full_checks += 1;
                }
            }
        }
    }
    Ok(format!(
        "{} fixture blocks valid; {mutations} single-byte mutations over 20 blocks all detected ({full_checks} whole-file)",
        r.chain.len()
    ))
}

fn popularity_conservation() -> Outcome {
    let r = long_run();
    let mut worst: f64 = 0.0;
    for b in r.chain.blocks() {
        if b.popularity.is_empty() {
            continue;
        }
        let sum: f64 = b.popularity.0.values().sum();
        worst = worst.max((sum - 100.0).abs());
        ensure!((sum - 100.0).abs() <= 1e-9, "block {} popularity sums to {sum}", b.number);
        ensure!(b.popularity.0.values().all(|v| *v >= 0.0), "negative popularity at {}", b.number);
    }
    // Hand-evaluated: 0.3 * 50 + 0.7 * 100 = 85 and 0.3 * 50 + 0.7 * 0 = 15.
    let prev: PopularitySnapshot = [("a".to_string(), 50.0), ("b".to_string(), 50.0)].into_iter().collect();
    let next = update_popularity(&prev, &BTreeMap::from([("a".to_string(), 100), ("b".to_string(), 0)]));
    ensure!((next.get("a") - 85.0).abs() < 1e-12 && (next.get("b") - 15.0).abs() < 1e-12, "got {:?}", next.0);
    let same = update_popularity(&prev, &BTreeMap::from([("a".to_string(), 0), ("b".to_string(), 0)]));
    ensure!(same == prev, "zero downloads changed the snapshot");
    Ok(format!("{} snapshots within {worst:.1e} of 100; (50,50)+(100,0) -> (85,15); t=0 unchanged", r.chain.len()))
}

fn top_four(snapshot: &PopularitySnapshot) -> BTreeSet<String> {
    let mut v: Vec<(&String, f64)> = snapshot.0.iter().map(|(k, p)| (k, *p)).collect();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(4).map(|(k, _)| k.clone()).collect()
}

fn forger_concentration() -> Outcome {
    let r = long_run();
    ensure!(r.chain.len() >= 1000, "only {} blocks", r.chain.len());
    let mut outside = 0;
    let mut forged = 0u64;
    let mut by_trail: BTreeMap<String, u64> = BTreeMap::new();
    for (b, m) in r.chain.blocks().iter().zip(&r.blocks).skip(1) {
        let snapshot = &b.metadata.popularity_at_generation;
        forged += 1;
        *by_trail.entry(m.forger_trail.clone()).or_default() += 1;
        if snapshot.is_empty() {
            continue;
        }
        if !top_four(snapshot).contains(&m.forger_trail) {
            outside += 1;
        }
    }
    ensure!(outside == 0, "{outside} blocks forged by trails outside the top four at generation time");
    let major = by_trail.get("archlinux").copied().unwrap_or(0) + by_trail.get("pypy").copied().unwrap_or(0);
    ensure!(2 * major > forged, "archlinux+pypy forged {major} of {forged}");
    let overall: BTreeSet<&str> = ["archlinux", "pypy", "perl", "ruby"].into();
    let rest: u64 = by_trail.iter().filter(|(t, _)| !overall.contains(t.as_str())).map(|(_, n)| n).sum();
    Ok(format!(
        "{forged} forged blocks; archlinux+pypy {major} ({:.1}%); 0 outside per-block top four; {rest} by trails outside the overall top four",
        100.0 * major as f64 / forged as f64
    ))
}

fn preference_at(state: &ChainState, who: &Identity) -> f64 {
    state
        .registry
        .trails
        .values()
        .filter(|t| t.status == TrailStatus::Active && t.members.contains(who))
        .map(|t| state.popularity.0.get(&t.name).copied().unwrap_or(0.0))
        .sum()
}

fn admission_limits() -> Outcome {
    let cfg = SimConfig { master_seed: 5, ..small_config() };
    let mut events = synth::generate_events(9, 12, T0, 600);
    let burst_ts = T0 + 12 * 1200;
    events.extend(synth::burst_events(250, burst_ts));
    let r = run(&cfg, &events).map_err(|e| e.to_string())?;
    let blocks = r.chain.blocks();
    ensure!(blocks.iter().all(|b| b.packages.len() <= 100), "a block exceeds 100 packages");
    let burst_blocks: Vec<(u64, usize)> = blocks
        .iter()
        .map(|b| (b.number, b.packages.iter().filter(|p| p.submitted_at == burst_ts).count()))
        .filter(|(_, n)| *n > 0)
        .collect();
    let sizes: Vec<usize> = burst_blocks.iter().map(|(_, n)| *n).collect();
    ensure!(sizes == vec![100, 100, 50], "burst spread as {sizes:?}");
    ensure!(
        burst_blocks.windows(2).all(|w| w[1].0 == w[0].0 + 1),
        "burst blocks are not consecutive: {burst_blocks:?}"
    );

    // Ordering: replay states and compare each admitted package with every package still waiting.
    let scheme = Roster::new(&cfg).scheme();
    let mut state = ChainState::default();
    let key =
        |s: &ChainState, p: &PackageRecord| (preference_at(s, &p.publisher), p.submitted_at, p.recipe.name.clone());
    let better = |a: &(f64, u64, String), b: &(f64, u64, String)| {
        a.0 > b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 <= b.2)))
    };
    let mut checked = 0;
    for (i, b) in blocks.iter().enumerate() {
        let ts = b.timestamp;
        let waiting: Vec<&PackageRecord> =
            blocks[i + 1..].iter().flat_map(|later| later.packages.iter()).filter(|p| p.submitted_at <= ts).collect();
        for a in &b.packages {
            let ka = key(&state, a);
            for w in &waiting {
                let kw = key(&state, w);
                ensure!(better(&ka, &kw), "block {} admitted {} ahead of preferred {}", b.number, ka.2, kw.2);
                checked += 1;
            }
        }
        let (rep, next) = state.evaluate(b, &scheme, Exec::Sequential);
        ensure!(rep.is_valid(), "block {} invalid", b.number);
        state = next;
    }

    // 15 trail requests at once.
    let mut trails = vec![TrailSpec::new("archlinux", Some(".*"))];
    trails.extend((0..15).map(|i| TrailSpec::new(&format!("burst{i:02}"), None)));
    let cfg = SimConfig { users_per_trail: 1, trails, ..SimConfig::default() };
    let r = run(&cfg, &synth::generate_events(1, 5, T0, 600)).map_err(|e| e.to_string())?;
    let requests: Vec<usize> = r.chain.blocks().iter().map(|b| b.new_trail_requests()).collect();
    ensure!(requests.iter().all(|n| *n <= 10), "requests per block {requests:?}");
    ensure!(requests[1] == 10 && requests[2] == 5, "request admission {:?}", &requests[..4]);
    Ok(format!(
        "burst -> {sizes:?} in blocks {:?}; {checked} admitted/deferred pairs ordered; trail requests per block {:?}",
        burst_blocks.iter().map(|(h, _)| h).collect::<Vec<_>>(),
        &requests[..3]
    ))
}

fn vouch_timing() -> Outcome {
    let offsets = SimConfig::default().vouch_offsets;
    let mut rng = stream(42, "vouch-draws");
    let mut counts = BTreeMap::new();
    let n = 100_000;
    for _ in 0..n {
        *counts.entry(schedule_vouch(&mut rng, &offsets)).or_insert(0u64) += 1;
    }
    for (k, p) in &offsets {
        let f = counts.get(k).copied().unwrap_or(0) as f64 / n as f64;
        ensure!((f - p).abs() <= 0.02, "offset {k}: frequency {f} vs {p}");
    }
    let expected_blocks: f64 = offsets.iter().map(|(k, p)| *k as f64 * p).sum();
    let expected = expected_blocks * 20.0;

    // Uncongested: at most a handful of events per block, all trails active early.
    let cfg = SimConfig { master_seed: 42, ..small_config() };
    let events = synth::generate_events(21, 1000, T0, 1200);
    let r = run(&cfg, &events).map_err(|e| e.to_string())?;
    ensure!(r.blocks.iter().all(|b| b.packages < 100), "uncongested run hit the block limit");
    let delays: Vec<f64> = r.packages.iter().filter_map(|p| p.delay_minutes).map(|d| d as f64).collect();
    ensure!(delays.len() == r.packages.len(), "some packages never got a vouch");
    let mean = delays.iter().sum::<f64>() / delays.len() as f64;
    ensure!((mean - expected).abs() <= 0.1 * expected, "uncongested mean delay {mean:.2} vs {expected:.2}");

    let fixture = &fixture_run().result;
    let fd: Vec<f64> = fixture.packages.iter().filter_map(|p| p.delay_minutes).map(|d| d as f64).collect();
    let fixture_mean = fd.iter().sum::<f64>() / fd.len() as f64;
    ensure!((20.0..=80.0).contains(&fixture_mean), "fixture mean delay {fixture_mean:.2}");
    let freq: Vec<String> = offsets
        .iter()
        .map(|(k, _)| format!("{k}:{:.3}", counts.get(k).copied().unwrap_or(0) as f64 / n as f64))
        .collect();
    Ok(format!(
        "draws {}; uncongested mean {mean:.2} min (expected {expected:.1}); fixture mean {fixture_mean:.2} min",
        freq.join(" ")
    ))
}

fn proof_of_download() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let (mut at_start, mut at_end) = (0, 0);
    let mut ledger = DownloadLedger::new();
    for i in 0..1000u64 {
        let len = if i % 2 == 0 { rng.gen_range(1..=4) } else { rng.gen_range(1..=4096) };
        let mut pkg = vec![0u8; len];
        rng.fill_bytes(&mut pkg);
        let (tampered, rec) = prepare_delivery(&pkg, "t", rng.next_u64(), 32).map_err(|e| e.to_string())?;
        ensure!(tampered.len() == len + 32, "tampered length");
        at_start += (rec.offset == 0) as u32;
        at_end += (rec.offset == len) as u32;
        let id = rec.id;
        let hash = hash_bytes(&tampered);
        ledger.open(rec);
        let ConfirmOutcome::Confirmed { offset, length } = ledger.confirm_download(&id, &hash) else {
            return Err(format!("pair {i} not confirmed"));
        };
        let restored = restore_package(&tampered, offset, length).map_err(|e| e.to_string())?;
        ensure!(restored == pkg, "pair {i} did not restore");
        let before = ledger.interval_count("t");
        ensure!(ledger.confirm_download(&id, &hash) == ConfirmOutcome::Duplicate, "duplicate not flagged");
        ensure!(ledger.interval_count("t") == before, "duplicate counted");
    }
    ensure!(at_start > 0 && at_end > 0, "boundary offsets not exercised ({at_start}, {at_end})");
    ensure!(ledger.interval_count("t") == 1000, "count {}", ledger.interval_count("t"));

    let mut guesses = DownloadLedger::new();
    let pkg = vec![1u8; 512];
    let mut ids = Vec::new();
    for s in 0..100 {
        let (_, rec) = prepare_delivery(&pkg, "g", s, 32).map_err(|e| e.to_string())?;
        ids.push(rec.id);
        guesses.open(rec);
    }
    let mut confirmed = 0;
    for i in 0..10_000 {
        let mut guess = [0u8; 32];
        rng.fill_bytes(&mut guess);
        let id = if i % 2 == 0 { ids[i % ids.len()] } else { hash_bytes(&guess) };
        if matches!(guesses.confirm_download(&id, &hash_bytes(&guess)), ConfirmOutcome::Confirmed { .. }) {
            confirmed += 1;
        }
    }
    ensure!(confirmed == 0 && guesses.interval_count("g") == 0, "{confirmed} random guesses confirmed");
    Ok(format!("1000 round trips exact ({at_start} at offset 0, {at_end} at end); duplicates ignored; 0 of 10000 guesses confirmed"))
}

fn pkgbuild_parsing() -> Outcome {
    let text = std::fs::read_to_string(fixture("openssh.PKGBUILD")).map_err(|e| e.to_string())?;
    let r = parse_pkgbuild(&text).map_err(|e| e.to_string())?;
    ensure!(r.name == "openssh", "name {}", r.name);
    ensure!(r.version == "7.9p1", "version {}", r.version);
    ensure!(r.release == 1, "release {}", r.release);
    let base = "https://ftp.openbsd.org/pub/OpenBSD/OpenSSH/portable/openssh-7.9p1.tar.gz";
    ensure!(r.sources.first().map(String::as_str) == Some(base), "first source {:?}", r.sources.first());
    ensure!(r.sources.get(1) == Some(&format!("{base}.asc")), "second source {:?}", r.sources.get(1));
    ensure!(r.checksums.len() == 8, "{} checksums", r.checksums.len());
    ensure!(r.checksums[1] == "SKIP", "entry 2 is {}", r.checksums[1]);
    Ok(format!("openssh 7.9p1-1, {} sources, 8 checksums, entry 2 SKIP", r.sources.len()))
}

// ---------------------------------------------------------------------------
// Trail lifecycle, driven block by block through the chain API.

fn who(name: &str) -> Identity {
    Identity::from_keypair(name, &KeyPair::for_name(name))
}

fn sk(name: &str) -> PrivateKey {
    KeyPair::for_name(name).private_key
}

struct World {
    scheme: MockScheme,
    chain: Chain,
    seed: u64,
}

impl World {
    fn new(names: &[&str], genesis_ops: Vec<TrailOp>) -> Self {
        let scheme = MockScheme::for_names(names.iter().copied());
        let chain = Chain::new(make_genesis(T0, genesis_ops), &scheme).expect("genesis");
        World { scheme, chain, seed: 1000 }
    }

    fn challenge(&mut self, target: &str) -> Challenge {
        self.seed += 1;
        make_challenge(&self.scheme, &who(target).public_key, self.seed).unwrap()
    }

    fn request(&mut self, trail: &str, by: &str) -> (Vec<TrailOp>, Challenge) {
        let ch = self.challenge(by);
        let signature = self.scheme.sign(&trail_request_message(trail), &sk(by)).unwrap();
        let ops = vec![
            TrailOp {
                kind: TrailOpKind::CreateRequest,
                trail_name: trail.into(),
                subject: who(by),
                payload: OpPayload::Signed { signer: who(by), signature },
            },
            TrailOp {
                kind: TrailOpKind::CreateChallenge,
                trail_name: trail.into(),
                subject: who(by),
                payload: OpPayload::Challenge { challenge: ch.clone() },
            },
        ];
        (ops, ch)
    }

    fn answer(&self, kind: TrailOpKind, trail: &str, by: &str, ch: &Challenge) -> TrailOp {
        let solution = solve_challenge(&self.scheme, ch, &sk(by)).unwrap();
        TrailOp { kind, trail_name: trail.into(), subject: who(by), payload: OpPayload::Solution { solution } }
    }

    fn invite(&mut self, trail: &str, by: &str, invitee: &str) -> (TrailOp, Challenge) {
        let ch = self.challenge(invitee);
        let msg = member_invite_message(trail, &who(invitee).public_key, &ch.id);
        let signature = self.scheme.sign(&msg, &sk(by)).unwrap();
        let op = TrailOp {
            kind: TrailOpKind::MemberInvite,
            trail_name: trail.into(),
            subject: who(invitee),
            payload: OpPayload::Invite { inviter: who(by), challenge: ch.clone(), signature },
        };
        (op, ch)
    }

    fn remove(&self, trail: &str, by: &str, target: &str) -> TrailOp {
        let signature = self.scheme.sign(&member_remove_message(trail, &who(target).public_key), &sk(by)).unwrap();
        TrailOp {
            kind: TrailOpKind::MemberRemove,
            trail_name: trail.into(),
            subject: who(target),
            payload: OpPayload::Signed { signer: who(by), signature },
        }
    }

    fn package(&self, name: &str, by: &str) -> PackageRecord {
        let recipe = parse_pkgbuild(&format!("pkgname={name}\npkgver=1.0\npkgrel=1\n")).unwrap();
        let signature = self.scheme.sign(&recipe.canonical_bytes(), &sk(by)).unwrap();
        PackageRecord { recipe, publisher: who(by), signature, submitted_at: T0 }
    }

    fn vouch(&self, p: &PackageRecord, trail: &str, by: &str) -> VouchRecord {
        let signature = self.scheme.sign(&vouch_message(&p.recipe.checksum, trail), &sk(by)).unwrap();
        VouchRecord { package_checksum: p.recipe.checksum, trail_name: trail.into(), member: who(by), signature }
    }

    /// A correctly forged block carrying `ops`, `packages` and `vouches`,
    /// whether or not the content itself is acceptable.
    fn forge(&self, ops: Vec<TrailOp>, packages: Vec<PackageRecord>, vouches: Vec<VouchRecord>) -> Block {
        let state = self.chain.state();
        let payload = BlockPayload {
            timestamp: state.timestamp + 1200,
            downloads: BTreeMap::from([("archlinux".to_string(), 10)]),
            packages,
            vouches,
            trail_ops: ops.clone(),
        };
        let key_for = |id: &Identity| Some(sk(&id.name));
        if let Ok(block) = state.forge(payload.clone(), &self.scheme, &key_for) {
            return block;
        }
        // The forger refuses the operations; build the block anyway and seal it by hand.
        let mut block = state
            .forge(BlockPayload { trail_ops: vec![], ..payload }, &self.scheme, &key_for)
            .expect("forge without operations");
        block.trail_ops = ops;
        block.seal_hash();
        let forger = block.forger.clone().unwrap();
        block.forger_signature = Some(self.scheme.sign(block.hash.as_bytes(), &sk(&forger.name)).unwrap());
        block
    }

    fn accept(&mut self, block: Block) -> Result<(), String> {
        self.chain.append(block, &self.scheme).map_err(|e| e.to_string())
    }

    fn reject(&self, block: &Block) -> Result<(), String> {
        let r = self.chain.validate_block(block, &self.scheme);
        if r.is_valid() {
            Err(format!("block {} was accepted", block.number))
        } else {
            Ok(())
        }
    }
}

fn trail_lifecycle() -> Outcome {
    let names = ["Poppy", "Ava", "Leo"];
    let mut w = World::new(&names, vec![]);
    let (ops, arch_ch) = w.request("archlinux", "Poppy");
    w = World { chain: Chain::new(make_genesis(T0, ops), &w.scheme).map_err(|e| e.to_string())?, ..w };

    // Creation spans two blocks.
    let b1 = w.forge(vec![w.answer(TrailOpKind::CreateConfirm, "archlinux", "Poppy", &arch_ch)], vec![], vec![]);
    w.accept(b1)?;
    let (mut same_block, perl_ch) = w.request("perl", "Leo");
    same_block.push(w.answer(TrailOpKind::CreateConfirm, "perl", "Leo", &perl_ch));
    w.reject(&w.forge(same_block, vec![], vec![]))?;
    let (ops, perl_ch) = w.request("perl", "Leo");
    w.accept(w.forge(ops, vec![], vec![]))?;
    ensure!(w.chain.state().registry.get("perl").unwrap().status == TrailStatus::ChallengePending, "perl not pending");
    let confirm = w.answer(TrailOpKind::CreateConfirm, "perl", "Leo", &perl_ch);

    // A member operation in the confirming block is too early.
    let (early_invite, _) = w.invite("perl", "Leo", "Ava");
    w.reject(&w.forge(vec![confirm.clone(), early_invite], vec![], vec![]))?;
    w.accept(w.forge(vec![confirm], vec![], vec![]))?;
    let confirm_height = w.chain.state().height.unwrap();
    ensure!(w.chain.state().registry.get("perl").unwrap().status == TrailStatus::Active, "perl not active");

    let pkg = w.package("perl-json", "Leo");
    let (invite, ava_ch) = w.invite("perl", "Leo", "Ava");
    w.accept(w.forge(vec![invite], vec![pkg.clone()], vec![]))?;
    ensure!(w.chain.state().height == Some(confirm_height + 1), "invite height");
    w.accept(w.forge(vec![w.answer(TrailOpKind::MemberAccept, "perl", "Ava", &ava_ch)], vec![], vec![]))?;
    w.accept(w.forge(vec![], vec![], vec![w.vouch(&pkg, "perl", "Ava")]))?;

    // Removing the last member leaves the trail vacant.
    w.accept(w.forge(vec![w.remove("perl", "Leo", "Ava")], vec![], vec![]))?;
    w.accept(w.forge(vec![w.remove("perl", "Leo", "Leo")], vec![], vec![]))?;
    ensure!(w.chain.state().registry.get("perl").unwrap().status == TrailStatus::Vacant, "perl not vacant");
    w.reject(&w.forge(vec![], vec![], vec![w.vouch(&pkg, "perl", "Leo")]))?;

    // The name can be claimed again.
    let (ops, reclaim_ch) = w.request("perl", "Ava");
    w.accept(w.forge(ops, vec![], vec![]))?;
    w.accept(w.forge(vec![w.answer(TrailOpKind::CreateConfirm, "perl", "Ava", &reclaim_ch)], vec![], vec![]))?;
    let perl = w.chain.state().registry.get("perl").unwrap();
    ensure!(perl.status == TrailStatus::Active && perl.members.len() == 1, "perl not reclaimed");

    // Earlier vouches by the vacated trail still validate when the chain is replayed.
    let report = verify_chain(w.chain.blocks(), &w.scheme);
    ensure!(report.is_valid(), "replay failed: {:?}", report.violations.first());
    Ok(format!(
        "{} blocks: two-block creation, early member op rejected, vacancy, reclaim, historical vouch valid",
        w.chain.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("determinism golden", determinism),
        ("self-validation and mutation sweep", self_validation),
        ("popularity conservation", popularity_conservation),
        ("forger concentration", forger_concentration),
        ("admission limits", admission_limits),
        ("vouch timing", vouch_timing),
        ("proof-of-download", proof_of_download),
        ("PKGBUILD parsing", pkgbuild_parsing),
        ("trail lifecycle", trail_lifecycle),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
