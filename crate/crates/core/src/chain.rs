//! Append-only chain store: genesis, block validation, tamper detection and fork choice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::consensus::{align_snapshot, draw_forger, update_popularity};
use crate::crypto::{Digest, MockScheme, PrivateKey, SignatureScheme};
use crate::exec::Exec;
use crate::model::{
    block_digest, from_line, member_invite_message, member_remove_message, to_line, trail_request_message,
    vouch_message, Block, ForgeMetadata, Identity, OpPayload, PackageRecord, PopularitySnapshot, TrailOp, TrailOpKind,
    VouchRecord, MAX_FORGE_CANDIDATES, MAX_NEW_TRAILS_PER_BLOCK, MAX_PACKAGES_PER_BLOCK,
};
use crate::trails::TrailRegistry;

/// Validity rules. The numeric id is what reports print.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    /// Previous hash, height and timestamp follow the parent; line is canonical.
    Linkage = 1,
    /// Package and new-trail caps.
    Limits = 2,
    /// Package and vouch signatures; vouchers authorized at the parent state.
    PackagesAndVouches = 3,
    /// Trail requests, invites and removals signed by someone allowed to make them.
    TrailAuthority = 4,
    /// Creation confirmations and invite acceptances carry a valid solution.
    PuzzleSolution = 5,
    /// Forger, candidates and popularity match the draw from the parent state.
    ForgerEligibility = 6,
    /// Stored hash is the digest of the block and the forger signed it.
    HashAndSignature = 7,
}

impl Rule {
    pub fn id(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub height: u64,
    pub rule: Rule,
    /// The offending entry (package name, trail, field).
    pub entry: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}: {}", self.height, self.rule, self.entry, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// First invalid height. Everything from here to the tip is invalid.
    pub invalid_from: Option<u64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn from_violations(height: u64, violations: Vec<Violation>) -> Self {
        let invalid_from = (!violations.is_empty()).then_some(height);
        ValidationReport { violations, invalid_from }
    }
}

struct Collector {
    height: u64,
    out: Vec<Violation>,
}

impl Collector {
    fn push(&mut self, rule: Rule, entry: impl Into<String>, message: impl Into<String>) {
        self.out.push(Violation { height: self.height, rule, entry: entry.into(), message: message.into() });
    }
}

/// Everything a validator needs to judge the next block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainState {
    /// Height of the last applied block, `None` before genesis.
    pub height: Option<u64>,
    pub head: Digest,
    pub timestamp: u64,
    pub registry: TrailRegistry,
    pub popularity: PopularitySnapshot,
    /// Checksums of every published recipe.
    pub packages: BTreeSet<Digest>,
}

impl ChainState {
    pub fn next_height(&self) -> u64 {
        self.height.map_or(0, |h| h + 1)
    }

    pub fn validate_block(&self, block: &Block, scheme: &dyn SignatureScheme) -> ValidationReport {
        self.evaluate(block, scheme, Exec::default()).0
    }

    /// Validates `block` against this state and returns the report with the successor state.
    pub fn evaluate(&self, block: &Block, scheme: &dyn SignatureScheme, exec: Exec) -> (ValidationReport, ChainState) {
        let height = self.next_height();
        let mut c = Collector { height: block.number, out: Vec::new() };
        let genesis = self.height.is_none();

        // (1) linkage
        if block.number != height {
            c.push(Rule::Linkage, "number", format!("expected height {height}, found {}", block.number));
        }
        if block.previous_hash != self.head {
            c.push(Rule::Linkage, "previous_hash", format!("expected {}, found {}", self.head, block.previous_hash));
        }
        if genesis && block.timestamp == 0 {
            c.push(Rule::Linkage, "timestamp", "genesis timestamp must be positive");
        }
        if block.timestamp < self.timestamp {
            c.push(Rule::Linkage, "timestamp", format!("{} precedes parent {}", block.timestamp, self.timestamp));
        }

        // (2) limits
        if block.packages.len() > MAX_PACKAGES_PER_BLOCK {
            c.push(
                Rule::Limits,
                "packages",
                format!("{} packages exceed {MAX_PACKAGES_PER_BLOCK}", block.packages.len()),
            );
        }
        if block.new_trail_requests() > MAX_NEW_TRAILS_PER_BLOCK {
            c.push(
                Rule::Limits,
                "trails",
                format!("{} new trail requests exceed {MAX_NEW_TRAILS_PER_BLOCK}", block.new_trail_requests()),
            );
        }

        if genesis {
            self.check_genesis_shape(block, &mut c);
        }

        // (3) packages and vouches, judged at the parent state
        self.check_packages(&block.packages, scheme, exec, &mut c);
        self.check_vouches(&block.vouches, scheme, exec, &mut c);

        // (4)/(5) trail operations, applied in block order
        let mut registry = self.registry.clone();
        registry.expire_requests(height);
        for op in &block.trail_ops {
            if let Err(msg) = check_op_signature(op, scheme) {
                c.push(Rule::TrailAuthority, op.trail_name.clone(), msg);
                continue;
            }
            if let Err(v) = registry.apply_trail_op(op, height) {
                let rule = if v.is_solution_failure() { Rule::PuzzleSolution } else { Rule::TrailAuthority };
                c.push(rule, op.trail_name.clone(), v.to_string());
            }
        }
        for name in registry.unchallenged_requests(height) {
            c.push(Rule::TrailAuthority, name, "creation request without a challenge in the same block");
        }

        // (6) popularity, forger and candidates
        let active = registry.active_names();
        for trail in block.downloads.keys() {
            if !active.contains(trail) {
                c.push(Rule::ForgerEligibility, trail.clone(), "downloads reported for a trail that is not active");
            }
        }
        let popularity = update_popularity(&align_snapshot(&self.popularity, &active), &block.downloads);
        if block.popularity != popularity {
            c.push(Rule::ForgerEligibility, "popularity", "snapshot does not follow from the reported downloads");
        }
        if !genesis {
            self.check_forger(block, &mut c);
        }

        // (7) hash and forger signature
        let digest = block_digest(block);
        if block.hash != digest {
            c.push(Rule::HashAndSignature, "hash", format!("stored {} but content hashes to {digest}", block.hash));
        }
        if !genesis {
            match (&block.forger, &block.forger_signature) {
                (Some(forger), Some(sig)) if scheme.verify(block.hash.as_bytes(), sig, &forger.public_key) => {}
                (Some(_), Some(_)) => c.push(Rule::HashAndSignature, "forger_signature", "does not verify"),
                _ => c.push(Rule::HashAndSignature, "forger_signature", "missing"),
            }
        }

        let mut packages = self.packages.clone();
        packages.extend(block.packages.iter().map(|p| p.recipe.checksum));
        let next = ChainState {
            height: Some(height),
            head: block.hash,
            timestamp: block.timestamp.max(self.timestamp),
            registry,
            popularity: block.popularity.clone(),
            packages,
        };
        (ValidationReport::from_violations(block.number, c.out), next)
    }

    fn check_genesis_shape(&self, block: &Block, c: &mut Collector) {
        if block.forger.is_some() || block.forger_signature.is_some() {
            c.push(Rule::ForgerEligibility, "forger", "genesis has no forger");
        }
        if !block.packages.is_empty() || !block.vouches.is_empty() {
            c.push(Rule::Limits, "packages", "genesis carries no packages or vouches");
        }
        if block
            .trail_ops
            .iter()
            .any(|op| !matches!(op.kind, TrailOpKind::CreateRequest | TrailOpKind::CreateChallenge))
        {
            c.push(Rule::TrailAuthority, "trails", "genesis only carries creation requests");
        }
        if block.metadata != ForgeMetadata::default() {
            c.push(Rule::ForgerEligibility, "metadata", "genesis metadata must be empty");
        }
    }

    fn check_packages(&self, packages: &[PackageRecord], scheme: &dyn SignatureScheme, exec: Exec, c: &mut Collector) {
        let problems = exec.map(packages, |p| {
            if !p.publisher.is_well_formed() {
                return Some("publisher name is empty");
            }
            if p.recipe.checksum != p.recipe.compute_checksum() {
                return Some("recipe checksum does not match its content");
            }
            if !scheme.verify(&p.recipe.canonical_bytes(), &p.signature, &p.publisher.public_key) {
                return Some("publisher signature does not verify");
            }
            None
        });
        for (p, problem) in packages.iter().zip(problems) {
            if let Some(msg) = problem {
                c.push(Rule::PackagesAndVouches, p.recipe.name.clone(), msg);
            }
        }
    }

    fn check_vouches(&self, vouches: &[VouchRecord], scheme: &dyn SignatureScheme, exec: Exec, c: &mut Collector) {
        let problems = exec.map(vouches, |v| {
            if !scheme.verify(&vouch_message(&v.package_checksum, &v.trail_name), &v.signature, &v.member.public_key) {
                return Some("vouch signature does not verify");
            }
            if !self.registry.is_authorized_voucher(&v.trail_name, &v.member) {
                return Some("voucher is not a member of an active trail");
            }
            if !self.packages.contains(&v.package_checksum) {
                return Some("vouch for a package not yet on the chain");
            }
            None
        });
        for (v, problem) in vouches.iter().zip(problems) {
            if let Some(msg) = problem {
                c.push(Rule::PackagesAndVouches, format!("{}@{}", v.package_checksum, v.trail_name), msg);
            }
        }
    }

    fn check_forger(&self, block: &Block, c: &mut Collector) {
        let draw = match draw_forger(&self.popularity, &self.registry, &self.head, block.number) {
            Ok(d) => d,
            Err(e) => {
                c.push(Rule::ForgerEligibility, "forger", e.to_string());
                return;
            }
        };
        let meta = &block.metadata;
        if block.forger.as_ref() != Some(&draw.forger) {
            let found = block.forger.as_ref().map_or("none", |f| f.name.as_str());
            c.push(
                Rule::ForgerEligibility,
                "forger",
                format!("drawn forger is {}, block names {found}", draw.forger.name),
            );
        }
        if meta.everybody_that_can_forge_this_block != draw.candidates
            || meta.everybody_that_can_forge_this_block.len() > MAX_FORGE_CANDIDATES
        {
            c.push(Rule::ForgerEligibility, "metadata", "candidate list differs from the draw");
        }
        if meta.popularity_at_generation != self.popularity {
            c.push(Rule::ForgerEligibility, "metadata", "popularity_at_generation differs from the parent snapshot");
        }
        if meta.amount_of_valid_trails != draw.eligible_trails as u64 {
            c.push(Rule::ForgerEligibility, "metadata", "amount_of_valid_trails is wrong");
        }
        if meta.amount_of_packages != block.packages.len() as u64 {
            c.push(Rule::ForgerEligibility, "metadata", "amount_of_packages is wrong");
        }
    }

    /// Assembles, hashes and signs the next block from its payload. The
    /// forger is whoever the draw selects; `key_for` must return their key.
    pub fn forge(
        &self,
        payload: BlockPayload,
        scheme: &dyn SignatureScheme,
        key_for: &dyn Fn(&Identity) -> Option<PrivateKey>,
    ) -> Result<Block, ForgeError> {
        let height = self.next_height();
        let draw = draw_forger(&self.popularity, &self.registry, &self.head, height)
            .map_err(|_| ForgeError::NoForger(height))?;
        let mut registry = self.registry.clone();
        registry.expire_requests(height);
        for op in &payload.trail_ops {
            registry.apply_trail_op(op, height).map_err(|e| ForgeError::TrailOp(e.to_string()))?;
        }
        let active = registry.active_names();
        let downloads: BTreeMap<String, u64> =
            payload.downloads.into_iter().filter(|(k, _)| active.contains(k)).collect();
        let popularity = update_popularity(&align_snapshot(&self.popularity, &active), &downloads);
        let mut block = Block {
            number: height,
            timestamp: payload.timestamp,
            previous_hash: self.head,
            forger: Some(draw.forger.clone()),
            forger_signature: None,
            metadata: ForgeMetadata {
                amount_of_packages: payload.packages.len() as u64,
                amount_of_valid_trails: draw.eligible_trails as u64,
                everybody_that_can_forge_this_block: draw.candidates.clone(),
                popularity_at_generation: self.popularity.clone(),
            },
            packages: payload.packages,
            vouches: payload.vouches,
            trail_ops: payload.trail_ops,
            downloads,
            popularity,
            hash: Digest::ZERO,
        };
        block.seal_hash();
        let key = key_for(&draw.forger).ok_or_else(|| ForgeError::MissingKey(draw.forger.name.clone()))?;
        block.forger_signature =
            Some(scheme.sign(block.hash.as_bytes(), &key).map_err(|e| ForgeError::Signing(e.to_string()))?);
        Ok(block)
    }
}

/// Content of a block before consensus fields are filled in.
#[derive(Clone, Debug, Default)]
pub struct BlockPayload {
    pub timestamp: u64,
    pub packages: Vec<PackageRecord>,
    pub vouches: Vec<VouchRecord>,
    pub trail_ops: Vec<TrailOp>,
    /// Confirmed downloads per trail; entries for inactive trails are dropped.
    pub downloads: BTreeMap<String, u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ForgeError {
    #[error("no eligible forger at height {0}")]
    NoForger(u64),
    #[error("trail operation rejected: {0}")]
    TrailOp(String),
    #[error("no key for forger {0}")]
    MissingKey(String),
    #[error("signing failed: {0}")]
    Signing(String),
}

fn check_op_signature(op: &TrailOp, scheme: &dyn SignatureScheme) -> Result<(), String> {
    match (&op.kind, &op.payload) {
        (TrailOpKind::CreateRequest, OpPayload::Signed { signer, signature }) => {
            if !scheme.verify(&trail_request_message(&op.trail_name), signature, &signer.public_key) {
                return Err("request signature does not verify".into());
            }
        }
        (TrailOpKind::MemberInvite, OpPayload::Invite { inviter, challenge, signature }) => {
            let msg = member_invite_message(&op.trail_name, &op.subject.public_key, &challenge.id);
            if !scheme.verify(&msg, signature, &inviter.public_key) {
                return Err("invite signature does not verify".into());
            }
        }
        (TrailOpKind::MemberRemove, OpPayload::Signed { signer, signature }) => {
            let msg = member_remove_message(&op.trail_name, &op.subject.public_key);
            if !scheme.verify(&msg, signature, &signer.public_key) {
                return Err("removal signature does not verify".into());
            }
        }
        _ => {}
    }
    if !op.subject.is_well_formed() {
        return Err("subject name is empty".into());
    }
    Ok(())
}

/// Genesis: height 0, all-zero parent, no packages, carrying the bootstrap
/// trail requests (each followed by its challenge).
pub fn make_genesis(timestamp: u64, initial_trail_ops: Vec<TrailOp>) -> Block {
    let mut registry = TrailRegistry::new();
    for op in &initial_trail_ops {
        let _ = registry.apply_trail_op(op, 0);
    }
    let popularity = align_snapshot(&PopularitySnapshot::default(), &registry.active_names());
    let mut block = Block {
        number: 0,
        timestamp,
        previous_hash: Digest::ZERO,
        forger: None,
        forger_signature: None,
        packages: vec![],
        vouches: vec![],
        trail_ops: initial_trail_ops,
        downloads: BTreeMap::new(),
        popularity,
        metadata: ForgeMetadata::default(),
        hash: Digest::ZERO,
    };
    block.seal_hash();
    block
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("block rejected at height {}: {}", .0.invalid_from.unwrap_or_default(), first_violation(.0))]
    Rejected(ValidationReport),
    #[error("no candidate chains")]
    NoCandidates,
    #[error("no candidate chain is valid")]
    NoValidCandidate,
    #[error("candidates do not share a genesis block")]
    GenesisMismatch,
}

fn first_violation(r: &ValidationReport) -> String {
    r.violations.first().map(|v| v.to_string()).unwrap_or_default()
}

/// A validated chain with the state at its tip.
#[derive(Clone, Debug)]
pub struct Chain {
    blocks: Vec<Block>,
    state: ChainState,
}

impl Chain {
    pub fn new(genesis: Block, scheme: &dyn SignatureScheme) -> Result<Self, ChainError> {
        let mut chain = Chain { blocks: Vec::new(), state: ChainState::default() };
        chain.append(genesis, scheme)?;
        Ok(chain)
    }

    pub fn validate_block(&self, block: &Block, scheme: &dyn SignatureScheme) -> ValidationReport {
        self.state.validate_block(block, scheme)
    }

    /// Validates and appends. Invalid blocks are returned with their report.
    pub fn append(&mut self, block: Block, scheme: &dyn SignatureScheme) -> Result<(), ChainError> {
        let (report, next) = self.state.evaluate(&block, scheme, Exec::default());
        if !report.is_valid() {
            return Err(ChainError::Rejected(report));
        }
        self.state = next;
        self.blocks.push(block);
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn head(&self) -> Digest {
        self.state.head
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("a chain always holds genesis")
    }

    /// Chain file contents: one canonical line per block, newline-terminated.
    pub fn to_file_string(&self) -> String {
        chain_file_string(&self.blocks)
    }
}

pub fn chain_file_string(blocks: &[Block]) -> String {
    let mut s = String::new();
    for b in blocks {
        s.push_str(&to_line(b));
        s.push('\n');
    }
    s
}

/// Replays `blocks` from genesis. Stops at the first invalid block, which
/// invalidates it and every descendant.
pub fn verify_chain(blocks: &[Block], scheme: &dyn SignatureScheme) -> ValidationReport {
    verify_chain_with(blocks, scheme, Exec::default())
}

pub fn verify_chain_with(blocks: &[Block], scheme: &dyn SignatureScheme, exec: Exec) -> ValidationReport {
    let mut state = ChainState::default();
    for b in blocks {
        let (report, next) = state.evaluate(b, scheme, exec);
        if !report.is_valid() {
            return ValidationReport { invalid_from: Some(state.next_height()), ..report };
        }
        state = next;
    }
    ValidationReport::default()
}

/// Like [`verify_chain`] but over stored lines, so encoding damage is caught
/// as well: each line must parse and be byte-identical to its re-encoding.
pub fn verify_chain_lines(lines: &[&str], scheme: &dyn SignatureScheme) -> ValidationReport {
    verify_lines_from(ChainState::default(), lines, scheme).0
}

/// Continues verification from `state`; returns the report and the state
/// after the last valid line.
pub fn verify_lines_from(
    mut state: ChainState,
    lines: &[&str],
    scheme: &dyn SignatureScheme,
) -> (ValidationReport, ChainState) {
    for line in lines {
        let height = state.next_height();
        let fail = |rule: Rule, entry: &str, message: String| ValidationReport {
            violations: vec![Violation { height, rule, entry: entry.into(), message }],
            invalid_from: Some(height),
        };
        let block = match from_line(line) {
            Ok(b) => b,
            Err(e) => return (fail(Rule::HashAndSignature, "encoding", e.to_string()), state),
        };
        if to_line(&block) != *line {
            return (
                fail(Rule::HashAndSignature, "encoding", "stored bytes are not the canonical encoding".into()),
                state,
            );
        }
        let (report, next) = state.evaluate(&block, scheme, Exec::default());
        if !report.is_valid() {
            return (ValidationReport { invalid_from: Some(height), ..report }, state);
        }
        state = next;
    }
    (ValidationReport::default(), state)
}

/// Verifies a whole chain file. Every line, the last included, must end in a
/// newline; an empty file is not a chain.
pub fn verify_chain_bytes(bytes: &[u8], scheme: &dyn SignatureScheme) -> ValidationReport {
    let encoding = |height: u64, message: &str| ValidationReport {
        violations: vec![Violation {
            height,
            rule: Rule::HashAndSignature,
            entry: "encoding".into(),
            message: message.into(),
        }],
        invalid_from: Some(height),
    };
    if bytes.is_empty() {
        return encoding(0, "empty chain file");
    }
    let body = match bytes.strip_suffix(b"\n") {
        Some(b) => b,
        None => {
            let last = bytes.split(|c| *c == b'\n').count() as u64 - 1;
            return encoding(last, "missing final newline");
        }
    };
    let mut lines = Vec::new();
    for (i, raw) in body.split(|c| *c == b'\n').enumerate() {
        match std::str::from_utf8(raw) {
            Ok(s) => lines.push(s),
            Err(_) => {
                // Earlier lines still have to be checked before blaming this one.
                let report = verify_chain_lines(&lines, scheme);
                return if report.is_valid() { encoding(i as u64, "line is not valid UTF-8") } else { report };
            }
        }
    }
    verify_chain_lines(&lines, scheme)
}

/// Picks the longest valid candidate, breaking ties by the smaller head digest.
/// Returns the index into `candidates`.
pub fn choose_head(candidates: &[Vec<Block>], scheme: &dyn SignatureScheme) -> Result<usize, ChainError> {
    if candidates.is_empty() {
        return Err(ChainError::NoCandidates);
    }
    let genesis: BTreeSet<Option<Digest>> = candidates.iter().map(|c| c.first().map(|b| b.hash)).collect();
    if genesis.len() > 1 {
        return Err(ChainError::GenesisMismatch);
    }
    let valid = Exec::default().map(candidates, |c| !c.is_empty() && verify_chain(c, scheme).is_valid());
    candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| valid[*i])
        .max_by(|(_, a), (_, b)| {
            let head = |c: &Vec<Block>| c.last().map(|b| b.hash).unwrap_or_default();
            a.len().cmp(&b.len()).then_with(|| head(b).cmp(&head(a)))
        })
        .map(|(i, _)| i)
        .ok_or(ChainError::NoValidCandidate)
}

/// Every name attached to a public key in `blocks`. Used to rebuild the
/// simulation key registry for stand-alone validation.
pub fn identity_names(blocks: &[Block]) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut add = |id: &Identity| {
        names.insert(id.name.clone());
    };
    for b in blocks {
        if let Some(f) = &b.forger {
            add(f);
        }
        for p in &b.packages {
            add(&p.publisher);
        }
        for v in &b.vouches {
            add(&v.member);
        }
        for op in &b.trail_ops {
            add(&op.subject);
            match &op.payload {
                OpPayload::Signed { signer, .. } => add(signer),
                OpPayload::Invite { inviter, .. } => add(inviter),
                _ => {}
            }
        }
        for cand in &b.metadata.everybody_that_can_forge_this_block {
            add(&cand.user);
        }
    }
    names
}

/// Mock key registry for every identity named in `blocks`, so a chain
/// produced by the simulator can be checked without the simulator.
pub fn scheme_for_chain(blocks: &[Block]) -> MockScheme {
    MockScheme::for_names(identity_names(blocks).iter().map(String::as_str))
}

/// Parses every line of a chain file that parses, skipping the rest.
pub fn parse_chain_lenient(bytes: &[u8]) -> Vec<Block> {
    bytes.split(|c| *c == b'\n').filter_map(|l| std::str::from_utf8(l).ok()).filter_map(|l| from_line(l).ok()).collect()
}
