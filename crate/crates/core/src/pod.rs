//! Proof-of-download.
//!
//! A provider inserts a random chunk at a random offset before delivery and
//! remembers the hash of the tampered file. A client proves it downloaded the
//! file by reporting that hash; only then does it learn where the chunk sits so
//! it can restore the original. Each confirmed challenge counts one download
//! for its trail, at most once.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{hash_bytes, hash_parts, Digest};

pub const DEFAULT_CHUNK_LENGTH: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PodError {
    #[error("cannot deliver an empty package")]
    EmptyPackage,
    #[error("chunk length must be at least 1")]
    EmptyChunk,
    #[error("range {offset}+{length} exceeds {available} bytes")]
    OutOfRange { offset: usize, length: usize, available: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChallengeRecord {
    pub id: Digest,
    pub package_checksum: Digest,
    pub trail_name: String,
    pub offset: usize,
    pub length: usize,
    pub expected_tampered_hash: Digest,
    pub solved: bool,
}

/// Tampers `package` for delivery: inserts `chunk_length` seeded random bytes
/// at a seeded random offset in `0..=len`.
pub fn prepare_delivery(
    package: &[u8],
    trail_name: &str,
    rng_seed: u64,
    chunk_length: usize,
) -> Result<(Vec<u8>, ChallengeRecord), PodError> {
    if package.is_empty() {
        return Err(PodError::EmptyPackage);
    }
    if chunk_length == 0 {
        return Err(PodError::EmptyChunk);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let offset = rng.gen_range(0..=package.len());
    let mut chunk = vec![0u8; chunk_length];
    rng.fill_bytes(&mut chunk);
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);

    let mut tampered = Vec::with_capacity(package.len() + chunk_length);
    tampered.extend_from_slice(&package[..offset]);
    tampered.extend_from_slice(&chunk);
    tampered.extend_from_slice(&package[offset..]);

    let package_checksum = hash_bytes(package);
    let record = ChallengeRecord {
        id: hash_parts(&[package_checksum.as_bytes(), &(offset as u64).to_le_bytes(), &nonce]),
        package_checksum,
        trail_name: trail_name.to_string(),
        offset,
        length: chunk_length,
        expected_tampered_hash: hash_bytes(&tampered),
        solved: false,
    };
    Ok((tampered, record))
}

/// Removes `tampered[offset..offset + length]`.
pub fn restore_package(tampered: &[u8], offset: usize, length: usize) -> Result<Vec<u8>, PodError> {
    let end = offset.checked_add(length).filter(|e| *e <= tampered.len());
    let Some(end) = end else {
        return Err(PodError::OutOfRange { offset, length, available: tampered.len() });
    };
    let mut out = Vec::with_capacity(tampered.len() - length);
    out.extend_from_slice(&tampered[..offset]);
    out.extend_from_slice(&tampered[end..]);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConfirmOutcome {
    /// Hash matched a fresh challenge; the client may now strip this range.
    Confirmed { offset: usize, length: usize },
    /// Already solved earlier; not counted again.
    Duplicate,
    /// Unknown challenge or wrong hash; ignored.
    Rejected,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DownloadSnapshot {
    pub per_trail: BTreeMap<String, u64>,
    pub t: u64,
}

#[derive(Clone, Debug, Default)]
pub struct DownloadLedger {
    open_challenges: BTreeMap<Digest, ChallengeRecord>,
    interval_counts: BTreeMap<String, u64>,
    cumulative_counts: BTreeMap<String, u64>,
}

impl DownloadLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, record: ChallengeRecord) {
        self.open_challenges.insert(record.id, record);
    }

    pub fn challenge(&self, id: &Digest) -> Option<&ChallengeRecord> {
        self.open_challenges.get(id)
    }

    pub fn confirm_download(&mut self, challenge_id: &Digest, reported_hash: &Digest) -> ConfirmOutcome {
        let Some(record) = self.open_challenges.get_mut(challenge_id) else {
            return ConfirmOutcome::Rejected;
        };
        if record.solved {
            return ConfirmOutcome::Duplicate;
        }
        if record.expected_tampered_hash != *reported_hash {
            return ConfirmOutcome::Rejected;
        }
        record.solved = true;
        *self.interval_counts.entry(record.trail_name.clone()).or_default() += 1;
        *self.cumulative_counts.entry(record.trail_name.clone()).or_default() += 1;
        ConfirmOutcome::Confirmed { offset: record.offset, length: record.length }
    }

    /// Adds `count` confirmations for `trail` without individual challenges.
    /// The replay simulator uses this to account for download volumes far too
    /// large to run one by one.
    pub fn credit_synthetic(&mut self, trail: &str, count: u64) {
        if count == 0 {
            return;
        }
        *self.interval_counts.entry(trail.to_string()).or_default() += count;
        *self.cumulative_counts.entry(trail.to_string()).or_default() += count;
    }

    /// Publishes the interval counts and starts a new interval.
    pub fn snapshot_and_reset(&mut self) -> DownloadSnapshot {
        let per_trail = std::mem::take(&mut self.interval_counts);
        let t = per_trail.values().sum();
        DownloadSnapshot { per_trail, t }
    }

    /// Drops every challenge opened so far. Called at each block boundary.
    pub fn expire_challenges(&mut self) {
        self.open_challenges.clear();
    }

    pub fn interval_count(&self, trail: &str) -> u64 {
        self.interval_counts.get(trail).copied().unwrap_or(0)
    }

    pub fn cumulative_count(&self, trail: &str) -> u64 {
        self.cumulative_counts.get(trail).copied().unwrap_or(0)
    }

    pub fn cumulative(&self) -> &BTreeMap<String, u64> {
        &self.cumulative_counts
    }

    pub fn open_len(&self) -> usize {
        self.open_challenges.len()
    }
}
