//! Per-block decisions: popularity update, forger selection and admission order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{hash_parts, Digest};
use crate::model::{ForgeCandidate, Identity, PackageRecord, PopularitySnapshot, TrailOp, MAX_FORGE_CANDIDATES};
use crate::trails::{TrailRegistry, TrailStatus};

/// Weight of the previous popularity in the blend.
pub const PREVIOUS_WEIGHT: f64 = 0.3;
/// Weight of the current interval's download share.
pub const CURRENT_WEIGHT: f64 = 0.7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("no active trail with members is available to forge")]
    NoEligibleTrail,
}

/// Folds one interval of confirmed downloads into the popularity snapshot.
///
/// With `t` the interval total, each trail gets
/// `raw = 0.3 * (pp / 100) * t + 0.7 * cp` where `cp` is its download count,
/// and the result is `100 * raw / sum(raw)`. When `prev` sums to 100 this is
/// `0.3 * pp + 70 * cp / t`. A zero-download interval leaves every share as is.
/// Trails present only in `downloads` enter with `pp = 0`.
pub fn update_popularity(prev: &PopularitySnapshot, downloads: &BTreeMap<String, u64>) -> PopularitySnapshot {
    let mut keys: BTreeSet<&String> = prev.0.keys().collect();
    keys.extend(downloads.keys());
    let t: u64 = downloads.values().sum();
    if t == 0 {
        return keys.into_iter().map(|k| (k.clone(), prev.get(k))).collect();
    }
    let t = t as f64;
    let raw: Vec<(&String, f64)> = keys
        .into_iter()
        .map(|k| {
            let pp = prev.get(k);
            let cp = downloads.get(k).copied().unwrap_or(0) as f64;
            (k, PREVIOUS_WEIGHT * (pp / 100.0) * t + CURRENT_WEIGHT * cp)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, r)| r).sum();
    raw.into_iter().map(|(k, r)| (k.clone(), 100.0 * r / total)).collect()
}

/// Restricts a snapshot to `active` trails, adding newcomers at zero. If an
/// entry was dropped the remainder is rescaled to 100.
pub fn align_snapshot(prev: &PopularitySnapshot, active: &BTreeSet<String>) -> PopularitySnapshot {
    let dropped = prev.0.keys().any(|k| !active.contains(k));
    let mut out: PopularitySnapshot = active.iter().map(|k| (k.clone(), prev.get(k))).collect();
    let total = out.total();
    if dropped && total > 0.0 {
        for v in out.0.values_mut() {
            *v = 100.0 * *v / total;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PublisherPreference {
    pub identity: Identity,
    pub preference: f64,
}

/// Sum of the popularity of every active trail `identity` belongs to.
pub fn publisher_preference(
    identity: &Identity,
    snapshot: &PopularitySnapshot,
    registry: &TrailRegistry,
) -> PublisherPreference {
    let preference = registry.memberships(identity).map(|t| snapshot.get(&t.name)).sum();
    PublisherPreference { identity: identity.clone(), preference }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgerDraw {
    pub seed: Digest,
    pub top_trails: Vec<String>,
    pub candidates: Vec<ForgeCandidate>,
    pub forger_index: usize,
    pub forger: Identity,
    /// Trail the forger represents.
    pub forger_trail: String,
    /// Eligible trails at generation time.
    pub eligible_trails: usize,
}

/// Seed shared by every validator: `H(previous_hash || height)`.
pub fn forger_seed(prev_block_hash: &Digest, height: u64) -> Digest {
    hash_parts(&[prev_block_hash.as_bytes(), &height.to_be_bytes()])
}

fn uniform_index(rng: &mut ChaCha20Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn unit_interval(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Picks the four most popular eligible trails, one seeded member from each,
/// then the forger among those candidates with probability proportional to
/// their trail's popularity (uniform if all are zero).
pub fn select_forgers(
    snapshot: &PopularitySnapshot,
    registry: &TrailRegistry,
    prev_block_hash: &Digest,
    height: u64,
) -> Result<ForgerDraw, ConsensusError> {
    let mut eligible: Vec<(&str, f64)> =
        registry.eligible().map(|t| (t.name.as_str(), snapshot.get(&t.name))).collect();
    if eligible.is_empty() {
        return Err(ConsensusError::NoEligibleTrail);
    }
    let eligible_trails = eligible.len();
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    eligible.truncate(MAX_FORGE_CANDIDATES);

    let seed = forger_seed(prev_block_hash, height);
    let mut rng = ChaCha20Rng::from_seed(*seed.as_bytes());
    let candidates: Vec<ForgeCandidate> = eligible
        .iter()
        .map(|(name, pop)| {
            let members: Vec<&Identity> = registry.trails[*name].members.iter().collect();
            let pick = members[uniform_index(&mut rng, members.len())];
            ForgeCandidate { user: pick.clone(), popularity: *pop, trails: vec![name.to_string()] }
        })
        .collect();
    let forger_index = weighted_index(&mut rng, &candidates);
    Ok(ForgerDraw {
        seed,
        top_trails: eligible.iter().map(|(n, _)| n.to_string()).collect(),
        forger: candidates[forger_index].user.clone(),
        forger_trail: candidates[forger_index].trails[0].clone(),
        candidates,
        forger_index,
        eligible_trails,
    })
}

fn weighted_index(rng: &mut ChaCha20Rng, candidates: &[ForgeCandidate]) -> usize {
    let total: f64 = candidates.iter().map(|c| c.popularity).sum();
    if total <= 0.0 {
        return uniform_index(rng, candidates.len());
    }
    let target = unit_interval(rng) * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.popularity <= 0.0 {
            continue;
        }
        acc += c.popularity;
        last_positive = i;
        if target < acc {
            return i;
        }
    }
    last_positive
}

/// Forger draw used by block production and validation. Before any trail is
/// active, requesters whose creation puzzle is pending are the candidates.
pub fn draw_forger(
    snapshot: &PopularitySnapshot,
    registry: &TrailRegistry,
    prev_block_hash: &Digest,
    height: u64,
) -> Result<ForgerDraw, ConsensusError> {
    match select_forgers(snapshot, registry, prev_block_hash, height) {
        Err(ConsensusError::NoEligibleTrail) => bootstrap_draw(registry, prev_block_hash, height),
        other => other,
    }
}

fn bootstrap_draw(
    registry: &TrailRegistry,
    prev_block_hash: &Digest,
    height: u64,
) -> Result<ForgerDraw, ConsensusError> {
    let pending: Vec<(&str, &Identity)> = registry
        .trails
        .values()
        .filter(|t| t.status == TrailStatus::ChallengePending)
        .filter_map(|t| t.requested_by.as_ref().map(|who| (t.name.as_str(), who)))
        .take(MAX_FORGE_CANDIDATES)
        .collect();
    if pending.is_empty() {
        return Err(ConsensusError::NoEligibleTrail);
    }
    let seed = forger_seed(prev_block_hash, height);
    let mut rng = ChaCha20Rng::from_seed(*seed.as_bytes());
    let candidates: Vec<ForgeCandidate> = pending
        .iter()
        .map(|(name, who)| ForgeCandidate { user: (*who).clone(), popularity: 0.0, trails: vec![name.to_string()] })
        .collect();
    let forger_index = uniform_index(&mut rng, candidates.len());
    Ok(ForgerDraw {
        seed,
        top_trails: pending.iter().map(|(n, _)| n.to_string()).collect(),
        forger: candidates[forger_index].user.clone(),
        forger_trail: candidates[forger_index].trails[0].clone(),
        candidates,
        forger_index,
        eligible_trails: 0,
    })
}

/// Ordering key for admission: higher preference first, then earlier
/// submission, then name.
fn admission_order(a: (f64, u64, &str), b: (f64, u64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(b.2))
}

/// Splits `pending` into at most `cap` admitted packages and the deferred rest.
pub fn admit_packages(
    pending: Vec<PackageRecord>,
    snapshot: &PopularitySnapshot,
    registry: &TrailRegistry,
    cap: usize,
) -> (Vec<PackageRecord>, Vec<PackageRecord>) {
    let mut keyed: Vec<(f64, PackageRecord)> =
        pending.into_iter().map(|p| (publisher_preference(&p.publisher, snapshot, registry).preference, p)).collect();
    keyed.sort_by(|(pa, a), (pb, b)| {
        admission_order((*pa, a.submitted_at, &a.recipe.name), (*pb, b.submitted_at, &b.recipe.name))
            .then_with(|| a.recipe.version.cmp(&b.recipe.version))
            .then_with(|| a.recipe.checksum.cmp(&b.recipe.checksum))
    });
    let mut admitted: Vec<PackageRecord> = keyed.into_iter().map(|(_, p)| p).collect();
    let deferred = admitted.split_off(cap.min(admitted.len()));
    (admitted, deferred)
}

/// A creation request waiting for a slot, with the height it was queued at.
#[derive(Clone, Debug, PartialEq)]
pub struct QueuedRequest {
    pub op: TrailOp,
    pub queued_at: u64,
}

/// Same ordering as [`admit_packages`], applied to requesters.
pub fn admit_trail_requests(
    pending: Vec<QueuedRequest>,
    snapshot: &PopularitySnapshot,
    registry: &TrailRegistry,
    cap: usize,
) -> (Vec<QueuedRequest>, Vec<QueuedRequest>) {
    let mut keyed: Vec<(f64, QueuedRequest)> =
        pending.into_iter().map(|q| (publisher_preference(&q.op.subject, snapshot, registry).preference, q)).collect();
    keyed.sort_by(|(pa, a), (pb, b)| {
        admission_order((*pa, a.queued_at, &a.op.trail_name), (*pb, b.queued_at, &b.op.trail_name))
    });
    let mut admitted: Vec<QueuedRequest> = keyed.into_iter().map(|(_, q)| q).collect();
    let deferred = admitted.split_off(cap.min(admitted.len()));
    (admitted, deferred)
}
