//! Deterministic replay: turns a package timeline into a chain on a fixed
//! block cadence, with synthetic users, vouches and downloads.
//!
//! All randomness comes from `master_seed` through named streams, so drawing
//! more from one stream never shifts another.

mod config;
mod metrics;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub use config::{ConfigError, SimConfig, TrailSpec, OTHERS, ROSTER_TRAILS};
pub use metrics::{
    emit_metrics, BlockMetrics, MetricsError, PackageMetrics, BLOCKS_HEADER, FORGERS_HEADER, PACKAGES_HEADER,
    POPULARITY_HEADER,
};

use crate::chain::{make_genesis, BlockPayload, Chain, ChainError, ForgeError, ValidationReport};
use crate::consensus::{admit_packages, admit_trail_requests, QueuedRequest};
use crate::crypto::{
    hash_bytes, hash_parts, make_challenge, solve_challenge, Challenge, Digest, KeyPair, MockScheme, PrivateKey,
    SignatureScheme,
};
use crate::exec::Exec;
use crate::ingest::{assign_trails, PackageEvent, TrailRule};
use crate::model::{
    member_invite_message, to_line, trail_request_message, vouch_message, Block, Identity, OpPayload, PackageRecord,
    TrailOp, TrailOpKind, VouchRecord,
};
use crate::pkgbuild::PackageRecipe;
use crate::pod::{prepare_delivery, restore_package, ConfirmOutcome, DownloadLedger};
use crate::trails::TrailRegistry;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("could not forge block {height}: {source}")]
    Forge { height: u64, source: ForgeError },
    #[error("block {height} failed validation: {}", first(.report))]
    Rejected { height: u64, report: ValidationReport },
    #[error("chain error at block {height}: {message}")]
    Chain { height: u64, message: String },
    #[error("download proof failed at block {0}")]
    Download(u64),
}

fn first(r: &ValidationReport) -> String {
    r.violations.first().map(|v| v.to_string()).unwrap_or_default()
}

/// Independent generator for one named purpose.
pub fn stream(master_seed: u64, name: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(*hash_parts(&[&master_seed.to_le_bytes(), name.as_bytes()]).as_bytes())
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse CDF of the vouch-offset distribution. `u` is in `[0, 1)`.
pub fn offset_for_quantile(u: f64, offsets: &[(u64, f64)]) -> u64 {
    let mut acc = 0.0;
    for (k, p) in offsets {
        acc += p;
        if u < acc {
            return *k;
        }
    }
    offsets.iter().rev().find(|(_, p)| *p > 0.0).or(offsets.last()).map_or(1, |(k, _)| *k)
}

pub fn schedule_vouch(rng: &mut impl RngCore, offsets: &[(u64, f64)]) -> u64 {
    offset_for_quantile(unit_f64(rng), offsets)
}

/// One uniform draw per trail, in the order given.
pub fn draw_downloads(rng: &mut impl RngCore, trails: &[String], cfg: &SimConfig) -> BTreeMap<String, u64> {
    trails
        .iter()
        .map(|t| {
            let (lo, hi) = cfg.download_range(t);
            (t.clone(), rng.gen_range(lo..=hi))
        })
        .collect()
}

/// Synthetic users, grouped by the trail they belong to. The first user of
/// each trail founds it.
#[derive(Clone, Debug)]
pub struct Roster {
    pub by_trail: BTreeMap<String, Vec<Identity>>,
    keys: HashMap<String, PrivateKey>,
}

impl Roster {
    pub fn new(cfg: &SimConfig) -> Self {
        let mut by_trail = BTreeMap::new();
        let mut keys = HashMap::new();
        for t in &cfg.trails {
            let users: Vec<Identity> = (0..cfg.users_per_trail)
                .map(|j| {
                    let name = format!("{}.{j:02}", t.name);
                    let pair = KeyPair::for_name(&name);
                    let id = Identity::from_keypair(name.clone(), &pair);
                    keys.insert(name, pair.private_key);
                    id
                })
                .collect();
            by_trail.insert(t.name.clone(), users);
        }
        Roster { by_trail, keys }
    }

    pub fn founder(&self, trail: &str) -> &Identity {
        &self.by_trail[trail][0]
    }

    pub fn key(&self, who: &Identity) -> Option<PrivateKey> {
        self.keys.get(&who.name).cloned()
    }

    pub fn scheme(&self) -> MockScheme {
        MockScheme::for_names(self.keys.keys().map(String::as_str))
    }
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub chain: Chain,
    pub blocks: Vec<BlockMetrics>,
    pub packages: Vec<PackageMetrics>,
    /// Configured trail names, in configuration order.
    pub trails: Vec<String>,
    /// Events dropped because their recipe does not parse.
    pub skipped_events: usize,
}

impl SimResult {
    pub fn head(&self) -> Digest {
        self.chain.head()
    }

    pub fn chain_file(&self) -> String {
        self.chain.to_file_string()
    }

    /// Blocks forged per configured trail.
    pub fn forger_counts(&self) -> Vec<(String, u64)> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for b in &self.blocks {
            if !b.forger_trail.is_empty() {
                *counts.entry(&b.forger_trail).or_default() += 1;
            }
        }
        self.trails.iter().map(|t| (t.clone(), counts.get(t.as_str()).copied().unwrap_or(0))).collect()
    }
}

struct VouchJob {
    checksum: Digest,
    trails: Vec<String>,
    metrics_index: usize,
}

struct PendingAnswer {
    trail: String,
    who: Identity,
    challenge: Challenge,
}

struct Replay<'a> {
    cfg: &'a SimConfig,
    rules: Vec<TrailRule>,
    trails: Vec<String>,
    roster: Roster,
    scheme: MockScheme,
    chain: Chain,
    challenges: ChaCha20Rng,
    publishers: ChaCha20Rng,
    vouch_offsets: ChaCha20Rng,
    vouchers: ChaCha20Rng,
    downloads: ChaCha20Rng,
    pod: ChaCha20Rng,
    ledger: DownloadLedger,
    request_queue: Vec<QueuedRequest>,
    awaiting_confirm: Vec<PendingAnswer>,
    awaiting_invites: Vec<String>,
    awaiting_accept: Vec<PendingAnswer>,
    pending: Vec<PackageRecord>,
    vouch_jobs: BTreeMap<u64, Vec<VouchJob>>,
    blocks: Vec<BlockMetrics>,
    packages: Vec<PackageMetrics>,
    chain_bytes: u64,
    cum_packages: u64,
}

impl<'a> Replay<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let roster = Roster::new(cfg);
        let scheme = roster.scheme();
        let s = cfg.master_seed;
        Ok(Replay {
            cfg,
            rules: cfg.rules()?,
            trails: cfg.trails.iter().map(|t| t.name.clone()).collect(),
            roster,
            scheme,
            chain: Chain::new(make_genesis(1, vec![]), &MockScheme::new()).expect("placeholder genesis is valid"),
            challenges: stream(s, "challenges"),
            publishers: stream(s, "publishers"),
            vouch_offsets: stream(s, "vouches"),
            vouchers: stream(s, "vouchers"),
            downloads: stream(s, "downloads"),
            pod: stream(s, "pod"),
            ledger: DownloadLedger::new(),
            request_queue: Vec::new(),
            awaiting_confirm: Vec::new(),
            awaiting_invites: Vec::new(),
            awaiting_accept: Vec::new(),
            pending: Vec::new(),
            vouch_jobs: BTreeMap::new(),
            blocks: Vec::new(),
            packages: Vec::new(),
            chain_bytes: 0,
            cum_packages: 0,
        })
    }

    fn key(&self, who: &Identity) -> PrivateKey {
        self.roster.key(who).expect("roster users have keys")
    }

    fn sign(&self, msg: &[u8], who: &Identity) -> crate::crypto::Signature {
        self.scheme.sign(msg, &self.key(who)).expect("roster keys are well formed")
    }

    fn challenge_for(&mut self, who: &Identity) -> Challenge {
        let seed = self.challenges.next_u64();
        make_challenge(&self.scheme, &who.public_key, seed).expect("roster keys are registered")
    }

    fn answer(&self, kind: TrailOpKind, p: &PendingAnswer) -> TrailOp {
        let solution = solve_challenge(&self.scheme, &p.challenge, &self.key(&p.who)).expect("registered");
        TrailOp { kind, trail_name: p.trail.clone(), subject: p.who.clone(), payload: OpPayload::Solution { solution } }
    }

    /// Request plus challenge for `trail`, made by its founder.
    fn creation_ops(&mut self, trail: &str) -> (Vec<TrailOp>, PendingAnswer) {
        let founder = self.roster.founder(trail).clone();
        let signature = self.sign(&trail_request_message(trail), &founder);
        let challenge = self.challenge_for(&founder);
        let ops = vec![
            TrailOp {
                kind: TrailOpKind::CreateRequest,
                trail_name: trail.into(),
                subject: founder.clone(),
                payload: OpPayload::Signed { signer: founder.clone(), signature },
            },
            TrailOp {
                kind: TrailOpKind::CreateChallenge,
                trail_name: trail.into(),
                subject: founder.clone(),
                payload: OpPayload::Challenge { challenge: challenge.clone() },
            },
        ];
        (ops, PendingAnswer { trail: trail.into(), who: founder, challenge })
    }

    fn genesis(&mut self, timestamp: u64) -> Result<(), SimError> {
        let boot = self.cfg.bootstrap_trail.clone();
        let (ops, answer) = self.creation_ops(&boot);
        self.awaiting_confirm.push(answer);
        let genesis = make_genesis(timestamp, ops);
        self.chain = Chain::new(genesis, &self.scheme).map_err(|e| reject(0, e))?;
        for t in self.trails.clone() {
            if t == boot {
                continue;
            }
            let founder = self.roster.founder(&t).clone();
            let signature = self.sign(&trail_request_message(&t), &founder);
            let op = TrailOp {
                kind: TrailOpKind::CreateRequest,
                trail_name: t,
                subject: founder.clone(),
                payload: OpPayload::Signed { signer: founder, signature },
            };
            self.request_queue.push(QueuedRequest { op, queued_at: 1 });
        }
        self.record_block(0);
        Ok(())
    }

    fn submit(&mut self, timestamp: u64, recipe: PackageRecipe) {
        let matched = assign_trails(&recipe.name, &self.rules);
        let mut pool: Vec<&Identity> = Vec::new();
        let mut seen = BTreeSet::new();
        for t in self.trails.iter().filter(|t| matched.contains(*t)) {
            for u in &self.roster.by_trail[t] {
                if seen.insert(&u.name) {
                    pool.push(u);
                }
            }
        }
        if pool.is_empty() {
            pool = self.roster.by_trail.values().flatten().collect();
        }
        let publisher = pool[self.publishers.gen_range(0..pool.len())].clone();
        let signature = self.sign(&recipe.canonical_bytes(), &publisher);
        self.pending.push(PackageRecord { recipe, publisher, signature, submitted_at: timestamp });
    }

    fn trail_ops(&mut self) -> (Vec<TrailOp>, Vec<PendingAnswer>, Vec<String>, Vec<PendingAnswer>) {
        let mut ops = Vec::new();
        let mut confirmed = Vec::new();
        for p in std::mem::take(&mut self.awaiting_confirm) {
            ops.push(self.answer(TrailOpKind::CreateConfirm, &p));
            confirmed.push(p.trail);
        }
        for p in std::mem::take(&mut self.awaiting_accept) {
            ops.push(self.answer(TrailOpKind::MemberAccept, &p));
        }
        let mut invited = Vec::new();
        for trail in std::mem::take(&mut self.awaiting_invites) {
            let founder = self.roster.founder(&trail).clone();
            let invitees = self.roster.by_trail[&trail][1..].to_vec();
            for invitee in invitees {
                let challenge = self.challenge_for(&invitee);
                let signature = self.sign(&member_invite_message(&trail, &invitee.public_key, &challenge.id), &founder);
                ops.push(TrailOp {
                    kind: TrailOpKind::MemberInvite,
                    trail_name: trail.clone(),
                    subject: invitee.clone(),
                    payload: OpPayload::Invite { inviter: founder.clone(), challenge: challenge.clone(), signature },
                });
                invited.push(PendingAnswer { trail: trail.clone(), who: invitee, challenge });
            }
        }
        let state = self.chain.state();
        let (admitted, deferred) = admit_trail_requests(
            std::mem::take(&mut self.request_queue),
            &state.popularity,
            &state.registry,
            self.cfg.max_new_trails_per_block,
        );
        self.request_queue = deferred;
        let mut requested = Vec::new();
        for q in admitted {
            let (mut pair, answer) = self.creation_ops(&q.op.trail_name);
            pair[0] = q.op;
            ops.extend(pair);
            requested.push(answer);
        }
        (ops, requested, confirmed, invited)
    }

    fn vouches(&mut self, height: u64) -> Vec<VouchRecord> {
        let Some(jobs) = self.vouch_jobs.remove(&height) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut retry = Vec::new();
        for job in jobs {
            let mut later = Vec::new();
            for trail in job.trails {
                let members: Vec<Identity> = match self.chain.state().registry.get(&trail) {
                    Some(t) if t.is_active() && !t.members.is_empty() => t.members.iter().cloned().collect(),
                    _ => {
                        later.push(trail);
                        continue;
                    }
                };
                let member = members[self.vouchers.gen_range(0..members.len())].clone();
                let signature = self.sign(&vouch_message(&job.checksum, &trail), &member);
                out.push(VouchRecord { package_checksum: job.checksum, trail_name: trail, member, signature });
                let m = &mut self.packages[job.metrics_index];
                if m.vouch_height.is_none() {
                    m.vouch_height = Some(height);
                }
            }
            if !later.is_empty() {
                retry.push(VouchJob { trails: later, ..job });
            }
        }
        if !retry.is_empty() {
            self.vouch_jobs.entry(height + 1).or_default().extend(retry);
        }
        out
    }

    fn downloads(&mut self, height: u64, active_after: &BTreeSet<String>) -> Result<BTreeMap<String, u64>, SimError> {
        self.ledger.expire_challenges();
        let drawn = draw_downloads(&mut self.downloads, &self.trails, self.cfg);
        for (trail, count) in drawn {
            if count == 0 || !active_after.contains(&trail) {
                continue;
            }
            // One full challenge round trip per trail; the rest of the volume is credited in bulk.
            let content = format!("{trail}@{height}").into_bytes();
            let (tampered, record) = prepare_delivery(&content, &trail, self.pod.next_u64(), self.cfg.pod_chunk_length)
                .map_err(|_| SimError::Download(height))?;
            let id = record.id;
            self.ledger.open(record);
            match self.ledger.confirm_download(&id, &hash_bytes(&tampered)) {
                ConfirmOutcome::Confirmed { offset, length }
                    if restore_package(&tampered, offset, length).ok().as_deref() == Some(&content[..]) => {}
                _ => return Err(SimError::Download(height)),
            }
            self.ledger.credit_synthetic(&trail, count - 1);
        }
        Ok(self.ledger.snapshot_and_reset().per_trail)
    }

    fn block(&mut self, height: u64, timestamp: u64) -> Result<(), SimError> {
        let (trail_ops, requested, confirmed, invited) = self.trail_ops();

        let state = self.chain.state();
        let (admitted, deferred) = admit_packages(
            std::mem::take(&mut self.pending),
            &state.popularity,
            &state.registry,
            self.cfg.max_packages_per_block,
        );
        self.pending = deferred;
        let vouches = self.vouches(height);

        let mut after: TrailRegistry = self.chain.state().registry.clone();
        after.expire_requests(height);
        for op in &trail_ops {
            let _ = after.apply_trail_op(op, height);
        }
        let downloads = self.downloads(height, &after.active_names())?;

        for p in &admitted {
            let k = schedule_vouch(&mut self.vouch_offsets, &self.cfg.vouch_offsets);
            let trails: Vec<String> = self
                .trails
                .iter()
                .filter(|t| assign_trails(&p.recipe.name, &self.rules).contains(*t))
                .cloned()
                .collect();
            self.packages.push(PackageMetrics {
                name: p.recipe.name.clone(),
                version: format!("{}-{}", p.recipe.version, p.recipe.release),
                submit_ts: p.submitted_at,
                publish_height: height,
                vouch_height: None,
                delay_minutes: None,
            });
            let job = VouchJob { checksum: p.recipe.checksum, trails, metrics_index: self.packages.len() - 1 };
            self.vouch_jobs.entry(height + k).or_default().push(job);
        }

        let payload = BlockPayload { timestamp, packages: admitted, vouches, trail_ops, downloads };
        let roster = &self.roster;
        let block = self
            .chain
            .state()
            .forge(payload, &self.scheme, &|id| roster.key(id))
            .map_err(|source| SimError::Forge { height, source })?;
        self.chain.append(block, &self.scheme).map_err(|e| reject(height, e))?;

        self.awaiting_confirm = requested;
        self.awaiting_invites = confirmed;
        self.awaiting_accept = invited;
        self.record_block(height);
        Ok(())
    }

    fn record_block(&mut self, height: u64) {
        let block: &Block = self.chain.tip();
        self.chain_bytes += to_line(block).len() as u64 + 1;
        self.cum_packages += block.packages.len() as u64;
        let (forger, forger_trail) = match &block.forger {
            Some(f) => {
                let trail = block
                    .metadata
                    .everybody_that_can_forge_this_block
                    .iter()
                    .find(|c| &c.user == f)
                    .and_then(|c| c.trails.first().cloned())
                    .unwrap_or_default();
                (f.name.clone(), trail)
            }
            None => (String::new(), String::new()),
        };
        self.blocks.push(BlockMetrics {
            height,
            timestamp: block.timestamp,
            bytes: self.chain_bytes,
            packages: block.packages.len() as u64,
            cum_packages: self.cum_packages,
            forger,
            forger_trail,
            popularity: block.popularity.0.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        });
    }

    fn finish(mut self, skipped_events: usize) -> SimResult {
        let ts: BTreeMap<u64, u64> = self.blocks.iter().map(|b| (b.height, b.timestamp)).collect();
        for p in &mut self.packages {
            if let Some(v) = p.vouch_height {
                p.delay_minutes = Some((ts[&v] - ts[&p.publish_height]) / 60);
            }
        }
        SimResult {
            chain: self.chain,
            blocks: self.blocks,
            packages: self.packages,
            trails: self.trails,
            skipped_events,
        }
    }
}

fn reject(height: u64, e: ChainError) -> SimError {
    match e {
        ChainError::Rejected(report) => SimError::Rejected { height, report },
        other => SimError::Chain { height, message: other.to_string() },
    }
}

/// Replays `events` into a chain. Every block is validated as it is appended,
/// so a returned result is a valid chain.
pub fn run(cfg: &SimConfig, events: &[PackageEvent]) -> Result<SimResult, SimError> {
    let mut replay = Replay::new(cfg)?;
    let mut timeline: Vec<(u64, PackageRecipe)> = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for e in events {
        match e.recipe() {
            Ok(r) if e.timestamp > 0 => timeline.push((e.timestamp, r)),
            _ => skipped += 1,
        }
    }
    timeline.sort_by_key(|(ts, _)| *ts);

    let interval = cfg.interval_seconds();
    let genesis_ts = match timeline.first() {
        Some((ts, _)) => ts.saturating_sub(cfg.genesis_offset_minutes * 60).max(1),
        None => cfg.empty_genesis_timestamp,
    };
    replay.genesis(genesis_ts)?;
    if timeline.is_empty() && cfg.min_blocks == 0 {
        return Ok(replay.finish(skipped));
    }

    let mut due = timeline.into_iter().peekable();
    let mut drain = 0;
    let mut height = 1;
    loop {
        let busy = due.peek().is_some() || !replay.pending.is_empty() || height <= cfg.min_blocks;
        if !busy {
            if drain == cfg.max_vouch_offset() {
                break;
            }
            drain += 1;
        }
        let ts = genesis_ts + height * interval;
        while let Some((submitted, recipe)) = due.next_if(|(t, _)| *t <= ts) {
            replay.submit(submitted, recipe);
        }
        replay.block(height, ts)?;
        height += 1;
    }
    Ok(replay.finish(skipped))
}

/// Runs the same timeline under each seed and returns the head digests.
pub fn run_many(cfg: &SimConfig, events: &[PackageEvent], seeds: &[u64], exec: Exec) -> Vec<Result<Digest, String>> {
    exec.map(seeds, |seed| {
        let cfg = SimConfig { master_seed: *seed, ..cfg.clone() };
        run(&cfg, events).map(|r| r.head()).map_err(|e| e.to_string())
    })
}
