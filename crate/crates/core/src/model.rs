//! Domain records shared by every other module and their canonical encoding.
//!
//! A block's canonical form is minified JSON with lexicographically sorted
//! keys. The chain file stores one such line per block, including the `hash`
//! and `forger_signature` fields; the digest preimage omits both of them (the
//! signature is made over the digest, so it cannot be part of it).

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{hash_bytes, Challenge, Digest, KeyPair, PublicKey, Signature, Solution};
use crate::pkgbuild::PackageRecipe;

pub const MAX_PACKAGES_PER_BLOCK: usize = 100;
pub const MAX_NEW_TRAILS_PER_BLOCK: usize = 10;
pub const MAX_FORGE_CANDIDATES: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed block encoding: {0}")]
    Decode(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identity {
    pub name: String,
    pub public_key: PublicKey,
}

impl Identity {
    pub fn new(name: impl Into<String>, public_key: PublicKey) -> Self {
        Identity { name: name.into(), public_key }
    }

    pub fn from_keypair(name: impl Into<String>, keys: &KeyPair) -> Self {
        Identity::new(name, keys.public_key)
    }

    pub fn is_well_formed(&self) -> bool {
        !self.name.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageRecord {
    #[serde(rename = "package")]
    pub recipe: PackageRecipe,
    pub publisher: Identity,
    /// Over the recipe's canonical bytes.
    pub signature: Signature,
    pub submitted_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VouchRecord {
    pub package_checksum: Digest,
    pub trail_name: String,
    pub member: Identity,
    pub signature: Signature,
}

/// The exact bytes a vouch signs: the package checksum followed by the trail name.
pub fn vouch_message(package_checksum: &Digest, trail_name: &str) -> Vec<u8> {
    let mut m = package_checksum.to_hex().into_bytes();
    m.extend_from_slice(trail_name.as_bytes());
    m
}

pub fn trail_request_message(trail_name: &str) -> Vec<u8> {
    format!("trail-request:{trail_name}").into_bytes()
}

pub fn member_invite_message(trail_name: &str, invitee: &PublicKey, challenge_id: &Digest) -> Vec<u8> {
    format!("member-invite:{trail_name}:{invitee}:{challenge_id}").into_bytes()
}

pub fn member_remove_message(trail_name: &str, target: &PublicKey) -> Vec<u8> {
    format!("member-remove:{trail_name}:{target}").into_bytes()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailOpKind {
    CreateRequest,
    CreateChallenge,
    CreateConfirm,
    MemberInvite,
    MemberAccept,
    MemberRemove,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OpPayload {
    /// Request or removal, signed by `signer`.
    Signed {
        signer: Identity,
        signature: Signature,
    },
    /// Creation puzzle posted alongside a request.
    Challenge {
        challenge: Challenge,
    },
    Invite {
        inviter: Identity,
        challenge: Challenge,
        signature: Signature,
    },
    Solution {
        solution: Solution,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailOp {
    pub kind: TrailOpKind,
    pub trail_name: String,
    pub subject: Identity,
    pub payload: OpPayload,
}

impl TrailOp {
    /// Whether the payload variant is the one `kind` requires.
    pub fn payload_matches_kind(&self) -> bool {
        matches!(
            (self.kind, &self.payload),
            (TrailOpKind::CreateRequest, OpPayload::Signed { .. })
                | (TrailOpKind::CreateChallenge, OpPayload::Challenge { .. })
                | (TrailOpKind::CreateConfirm, OpPayload::Solution { .. })
                | (TrailOpKind::MemberInvite, OpPayload::Invite { .. })
                | (TrailOpKind::MemberAccept, OpPayload::Solution { .. })
                | (TrailOpKind::MemberRemove, OpPayload::Signed { .. })
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopularityEntry {
    pub name: String,
    pub pop: f64,
}

/// Per-trail popularity percentages, ordered by trail name. Encoded as a list
/// of `{name, pop}` entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PopularitySnapshot(pub BTreeMap<String, f64>);

impl PopularitySnapshot {
    pub fn get(&self, trail: &str) -> f64 {
        self.0.get(trail).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn entries(&self) -> Vec<PopularityEntry> {
        self.0.iter().map(|(name, pop)| PopularityEntry { name: name.clone(), pop: *pop }).collect()
    }
}

impl FromIterator<(String, f64)> for PopularitySnapshot {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        PopularitySnapshot(iter.into_iter().collect())
    }
}

impl Serialize for PopularitySnapshot {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.entries().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PopularitySnapshot {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<PopularityEntry>::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for e in entries {
            if !e.pop.is_finite() {
                return Err(serde::de::Error::custom("non-finite popularity"));
            }
            if map.insert(e.name.clone(), e.pop).is_some() {
                return Err(serde::de::Error::custom(format!("duplicate trail {}", e.name)));
            }
        }
        Ok(PopularitySnapshot(map))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeCandidate {
    pub user: Identity,
    pub popularity: f64,
    pub trails: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeMetadata {
    pub amount_of_packages: u64,
    pub amount_of_valid_trails: u64,
    pub everybody_that_can_forge_this_block: Vec<ForgeCandidate>,
    pub popularity_at_generation: PopularitySnapshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub number: u64,
    pub timestamp: u64,
    pub previous_hash: Digest,
    /// `None` only for genesis.
    pub forger: Option<Identity>,
    pub forger_signature: Option<Signature>,
    pub packages: Vec<PackageRecord>,
    pub vouches: Vec<VouchRecord>,
    #[serde(rename = "trails")]
    pub trail_ops: Vec<TrailOp>,
    /// Confirmed downloads per trail during the interval that closed with this block.
    pub downloads: BTreeMap<String, u64>,
    /// Popularity after folding in `downloads`.
    pub popularity: PopularitySnapshot,
    pub metadata: ForgeMetadata,
    pub hash: Digest,
}

impl Block {
    pub fn new_trail_requests(&self) -> usize {
        self.trail_ops.iter().filter(|op| op.kind == TrailOpKind::CreateRequest).count()
    }

    /// Recomputes and stores the digest.
    pub fn seal_hash(&mut self) {
        self.hash = block_digest(self);
    }
}

/// Digest preimage: sorted-key minified JSON without `hash` and `forger_signature`.
pub fn canonical_serialize(block: &Block) -> Vec<u8> {
    let mut value = serde_json::to_value(block).expect("block is always representable");
    if let Some(obj) = value.as_object_mut() {
        obj.remove("hash");
        obj.remove("forger_signature");
    }
    serde_json::to_vec(&value).expect("value serializes")
}

pub fn block_digest(block: &Block) -> Digest {
    hash_bytes(&canonical_serialize(block))
}

/// Full stored form of a block: one line of sorted-key minified JSON.
pub fn to_line(block: &Block) -> String {
    let value = serde_json::to_value(block).expect("block is always representable");
    serde_json::to_string(&value).expect("value serializes")
}

pub fn from_line(line: &str) -> Result<Block, ModelError> {
    Ok(serde_json::from_str(line)?)
}

/// Canonical bytes for any serializable record (sorted keys, minified).
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("record is representable");
    serde_json::to_vec(&v).expect("value serializes")
}
