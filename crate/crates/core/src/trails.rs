//! Trail registry and lifecycle.
//!
//! Creation takes two blocks: a request (with its puzzle in the same block)
//! and a confirmation carrying the solution in a later block. Members can be
//! invited from the block after confirmation. A trail whose last member leaves
//! becomes vacant and its name can be claimed again.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{verify_solution, Challenge, PublicKey};
use crate::model::{Identity, OpPayload, TrailOp, TrailOpKind};

/// Blocks after which an unanswered creation request lapses.
pub const REQUEST_EXPIRY_BLOCKS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrailStatus {
    Requested,
    ChallengePending,
    Active,
    Vacant,
}

impl fmt::Display for TrailStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrailStatus::Requested => "requested",
            TrailStatus::ChallengePending => "challenge_pending",
            TrailStatus::Active => "active",
            TrailStatus::Vacant => "vacant",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingInvite {
    pub invitee: Identity,
    pub inviter: Identity,
    pub challenge: Challenge,
    pub invited_at: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrailState {
    pub name: String,
    pub status: TrailStatus,
    /// Ordered by (name, key); forger draws index into this order.
    pub members: BTreeSet<Identity>,
    pub requested_by: Option<Identity>,
    pub requested_at: Option<u64>,
    pub pending_challenge: Option<Challenge>,
    /// Height of the confirming block, once the trail has been active.
    pub created_at_height: Option<u64>,
    pub invites: BTreeMap<PublicKey, PendingInvite>,
}

impl TrailState {
    fn requested(name: &str, by: Identity, height: u64, previous: Option<&TrailState>) -> Self {
        TrailState {
            name: name.to_string(),
            status: TrailStatus::Requested,
            members: BTreeSet::new(),
            requested_by: Some(by),
            requested_at: Some(height),
            pending_challenge: None,
            created_at_height: previous.and_then(|p| p.created_at_height),
            invites: BTreeMap::new(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == TrailStatus::Active
    }

    pub fn is_member(&self, who: &Identity) -> bool {
        self.members.contains(who)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrailViolation {
    #[error("trail name is empty")]
    EmptyName,
    #[error("payload does not match operation kind")]
    PayloadMismatch,
    #[error("trail `{0}` is already taken")]
    NameTaken(String),
    #[error("request for `{0}` must be signed by its subject")]
    RequestNotSelfSigned(String),
    #[error("no pending request for `{0}`")]
    NoPendingRequest(String),
    #[error("challenge for `{0}` must be in the request's block and target the requester")]
    MisplacedChallenge(String),
    #[error("request for `{0}` has no challenge in its block")]
    MissingChallenge(String),
    #[error("confirmation for `{0}` must come after the request block")]
    ConfirmTooEarly(String),
    #[error("confirmation for `{0}` is not from the requester")]
    WrongRequester(String),
    #[error("solution does not answer the pending challenge of `{0}`")]
    BadSolution(String),
    #[error("trail `{0}` is not active")]
    NotActive(String),
    #[error("`{who}` is not a member of `{trail}`")]
    NotAMember { trail: String, who: String },
    #[error("member operations on `{trail}` start at height {from}")]
    MemberOpTooEarly { trail: String, from: u64 },
    #[error("`{who}` is already a member of `{trail}`")]
    AlreadyMember { trail: String, who: String },
    #[error("invite challenge must target the invitee")]
    InviteTargetMismatch,
    #[error("no invite for `{who}` on `{trail}`")]
    NoInvite { trail: String, who: String },
    #[error("accept must come after the invite block")]
    AcceptTooEarly,
    #[error("removal of `{who}` from `{trail}` by an outsider")]
    RemoveByOutsider { trail: String, who: String },
}

impl TrailViolation {
    /// Whether the failure is about a puzzle solution (as opposed to authority or ordering).
    pub fn is_solution_failure(&self) -> bool {
        matches!(
            self,
            TrailViolation::BadSolution(_)
                | TrailViolation::NoPendingRequest(_)
                | TrailViolation::ConfirmTooEarly(_)
                | TrailViolation::WrongRequester(_)
                | TrailViolation::NoInvite { .. }
                | TrailViolation::AcceptTooEarly
        )
    }
}

/// First height at which member operations are accepted for a trail confirmed at `confirm_height`.
pub fn member_add_effective_height(confirm_height: u64) -> u64 {
    confirm_height + 1
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrailRegistry {
    pub trails: BTreeMap<String, TrailState>,
}

impl TrailRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&TrailState> {
        self.trails.get(name)
    }

    /// Active trails with at least one member.
    pub fn eligible(&self) -> impl Iterator<Item = &TrailState> {
        self.trails.values().filter(|t| t.is_active() && !t.members.is_empty())
    }

    pub fn active_names(&self) -> BTreeSet<String> {
        self.eligible().map(|t| t.name.clone()).collect()
    }

    pub fn is_authorized_voucher(&self, trail_name: &str, who: &Identity) -> bool {
        self.trails.get(trail_name).is_some_and(|t| t.is_active() && t.is_member(who))
    }

    /// Trails the identity is an active member of.
    pub fn memberships<'a>(&'a self, who: &'a Identity) -> impl Iterator<Item = &'a TrailState> + 'a {
        self.trails.values().filter(move |t| t.is_active() && t.is_member(who))
    }

    /// Drops creation requests left unanswered for more than [`REQUEST_EXPIRY_BLOCKS`].
    pub fn expire_requests(&mut self, height: u64) {
        let stale: Vec<String> = self
            .trails
            .values()
            .filter(|t| matches!(t.status, TrailStatus::Requested | TrailStatus::ChallengePending))
            .filter(|t| t.requested_at.is_some_and(|at| height.saturating_sub(at) > REQUEST_EXPIRY_BLOCKS))
            .map(|t| t.name.clone())
            .collect();
        for name in stale {
            let had_history = self.trails[&name].created_at_height.is_some();
            if had_history {
                let t = self.trails.get_mut(&name).expect("present");
                t.status = TrailStatus::Vacant;
                t.requested_by = None;
                t.requested_at = None;
                t.pending_challenge = None;
            } else {
                self.trails.remove(&name);
            }
        }
    }

    /// Requests made at `height` that never received their challenge.
    pub fn unchallenged_requests(&self, height: u64) -> Vec<String> {
        self.trails
            .values()
            .filter(|t| t.status == TrailStatus::Requested && t.requested_at == Some(height))
            .map(|t| t.name.clone())
            .collect()
    }

    /// Applies one operation included at `height`. Signatures on the payload
    /// are checked by the block validator; puzzle solutions are checked here
    /// against the stored challenges.
    pub fn apply_trail_op(&mut self, op: &TrailOp, height: u64) -> Result<(), TrailViolation> {
        let name = op.trail_name.as_str();
        if name.is_empty() {
            return Err(TrailViolation::EmptyName);
        }
        if !op.payload_matches_kind() {
            return Err(TrailViolation::PayloadMismatch);
        }
        match (op.kind, &op.payload) {
            (TrailOpKind::CreateRequest, OpPayload::Signed { signer, .. }) => {
                if *signer != op.subject {
                    return Err(TrailViolation::RequestNotSelfSigned(name.into()));
                }
                let previous = self.trails.get(name);
                if previous.is_some_and(|t| t.status != TrailStatus::Vacant) {
                    return Err(TrailViolation::NameTaken(name.into()));
                }
                let next = TrailState::requested(name, op.subject.clone(), height, previous);
                self.trails.insert(name.to_string(), next);
                Ok(())
            }
            (TrailOpKind::CreateChallenge, OpPayload::Challenge { challenge }) => {
                let t = self.trails.get_mut(name).ok_or_else(|| TrailViolation::NoPendingRequest(name.into()))?;
                let placed = t.status == TrailStatus::Requested
                    && t.requested_at == Some(height)
                    && t.requested_by.as_ref() == Some(&op.subject)
                    && challenge.target_public_key == op.subject.public_key;
                if !placed {
                    return Err(TrailViolation::MisplacedChallenge(name.into()));
                }
                t.status = TrailStatus::ChallengePending;
                t.pending_challenge = Some(challenge.clone());
                Ok(())
            }
            (TrailOpKind::CreateConfirm, OpPayload::Solution { solution }) => {
                let t = self.trails.get_mut(name).ok_or_else(|| TrailViolation::NoPendingRequest(name.into()))?;
                if t.status != TrailStatus::ChallengePending {
                    return Err(TrailViolation::NoPendingRequest(name.into()));
                }
                if t.requested_at.is_some_and(|at| height <= at) {
                    return Err(TrailViolation::ConfirmTooEarly(name.into()));
                }
                if t.requested_by.as_ref() != Some(&op.subject) {
                    return Err(TrailViolation::WrongRequester(name.into()));
                }
                let challenge = t.pending_challenge.as_ref().expect("pending status has a challenge");
                if !verify_solution(challenge, solution) {
                    return Err(TrailViolation::BadSolution(name.into()));
                }
                t.status = TrailStatus::Active;
                t.members = BTreeSet::from([op.subject.clone()]);
                t.created_at_height = Some(height);
                t.requested_by = None;
                t.requested_at = None;
                t.pending_challenge = None;
                Ok(())
            }
            (TrailOpKind::MemberInvite, OpPayload::Invite { inviter, challenge, .. }) => {
                let t = self.active_mut(name)?;
                if !t.is_member(inviter) {
                    return Err(TrailViolation::NotAMember { trail: name.into(), who: inviter.name.clone() });
                }
                let from = member_add_effective_height(t.created_at_height.unwrap_or(0));
                if height < from {
                    return Err(TrailViolation::MemberOpTooEarly { trail: name.into(), from });
                }
                if t.is_member(&op.subject) {
                    return Err(TrailViolation::AlreadyMember { trail: name.into(), who: op.subject.name.clone() });
                }
                if challenge.target_public_key != op.subject.public_key {
                    return Err(TrailViolation::InviteTargetMismatch);
                }
                t.invites.insert(
                    op.subject.public_key,
                    PendingInvite {
                        invitee: op.subject.clone(),
                        inviter: inviter.clone(),
                        challenge: challenge.clone(),
                        invited_at: height,
                    },
                );
                Ok(())
            }
            (TrailOpKind::MemberAccept, OpPayload::Solution { solution }) => {
                let t = self.active_mut(name)?;
                let no_invite = || TrailViolation::NoInvite { trail: name.into(), who: op.subject.name.clone() };
                let invite = t.invites.get(&op.subject.public_key).ok_or_else(no_invite)?;
                if invite.invitee != op.subject {
                    return Err(no_invite());
                }
                if height <= invite.invited_at {
                    return Err(TrailViolation::AcceptTooEarly);
                }
                if !verify_solution(&invite.challenge, solution) {
                    return Err(TrailViolation::BadSolution(name.into()));
                }
                t.invites.remove(&op.subject.public_key);
                t.members.insert(op.subject.clone());
                Ok(())
            }
            (TrailOpKind::MemberRemove, OpPayload::Signed { signer, .. }) => {
                let t = self.active_mut(name)?;
                let from = member_add_effective_height(t.created_at_height.unwrap_or(0));
                if height < from {
                    return Err(TrailViolation::MemberOpTooEarly { trail: name.into(), from });
                }
                if !t.is_member(&op.subject) {
                    return Err(TrailViolation::NotAMember { trail: name.into(), who: op.subject.name.clone() });
                }
                if *signer != op.subject && !t.is_member(signer) {
                    return Err(TrailViolation::RemoveByOutsider { trail: name.into(), who: signer.name.clone() });
                }
                t.members.remove(&op.subject);
                if t.members.is_empty() {
                    t.status = TrailStatus::Vacant;
                    t.invites.clear();
                }
                Ok(())
            }
            _ => Err(TrailViolation::PayloadMismatch),
        }
    }

    fn active_mut(&mut self, name: &str) -> Result<&mut TrailState, TrailViolation> {
        match self.trails.get_mut(name) {
            Some(t) if t.is_active() => Ok(t),
            _ => Err(TrailViolation::NotActive(name.into())),
        }
    }

    /// One line per trail: name, status, member count, created-at height (`-` if never active).
    pub fn summary_lines(&self) -> Vec<String> {
        self.trails
            .values()
            .map(|t| {
                let created = t.created_at_height.map_or_else(|| "-".to_string(), |h| h.to_string());
                format!("{}\t{}\t{}\t{}", t.name, t.status, t.members.len(), created)
            })
            .collect()
    }
}
