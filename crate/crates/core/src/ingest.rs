//! Package-history event files and trail assignment.
//!
//! An event file holds one JSON object per line:
//!
//! ```text
//! {"action":"add","author":"Jane Doe","path":"openssh/PKGBUILD","text":"pkgname=openssh\n...","ts":1546300800}
//! ```
//!
//! `ts` is integer UTC seconds and must be positive, `action` is `add` or
//! `update`, `text` is the full recipe. Keys are written in this sorted order
//! with no whitespace; readers accept any key order but reject unknown keys.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash_bytes, Digest};
use crate::pkgbuild::{parse_pkgbuild, PackageRecipe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventAction {
    Add,
    Update,
}

/// One recipe change. Field order is the on-disk key order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackageEvent {
    pub action: EventAction,
    /// Commit author; informational only.
    #[serde(rename = "author")]
    pub publisher_hint: String,
    pub path: String,
    #[serde(rename = "text")]
    pub recipe_text: String,
    #[serde(rename = "ts")]
    pub timestamp: u64,
}

impl PackageEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }

    pub fn recipe(&self) -> Result<PackageRecipe, crate::pkgbuild::PkgbuildError> {
        parse_pkgbuild(&self.recipe_text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number in the input file.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<PackageEvent>,
    pub skipped: Vec<SkippedLine>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error("invalid pattern for trail {trail}: {source}")]
    Pattern { trail: String, source: regex::Error },
}

pub fn read_events(path: &Path) -> Result<EventLog, IngestError> {
    let text =
        fs::read_to_string(path).map_err(|source| IngestError::Read { path: path.display().to_string(), source })?;
    Ok(parse_events(&text))
}

/// Parses event lines, skipping blank lines silently and counting every line
/// that is not a valid event or whose recipe does not parse. The result is
/// sorted by timestamp, keeping input order among equal timestamps.
pub fn parse_events(text: &str) -> EventLog {
    let mut log = EventLog::default();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let skip = |reason: String| SkippedLine { line: i + 1, reason };
        match serde_json::from_str::<PackageEvent>(raw) {
            Err(e) => log.skipped.push(skip(e.to_string())),
            Ok(ev) if ev.timestamp == 0 => log.skipped.push(skip("timestamp must be positive".into())),
            Ok(ev) => match ev.recipe() {
                Ok(_) => log.events.push(ev),
                Err(e) => log.skipped.push(skip(format!("recipe: {e}"))),
            },
        }
    }
    log.events.sort_by_key(|e| e.timestamp);
    log
}

pub fn events_to_string(events: &[PackageEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

pub fn write_events(path: &Path, events: &[PackageEvent]) -> Result<(), IngestError> {
    fs::write(path, events_to_string(events))
        .map_err(|source| IngestError::Write { path: path.display().to_string(), source })
}

/// Digest of the normalized event list.
pub fn events_digest(events: &[PackageEvent]) -> Digest {
    hash_bytes(events_to_string(events).as_bytes())
}

/// Assigns packages to a trail when `pattern` matches anywhere in the package
/// name, ignoring case.
#[derive(Clone, Debug)]
pub struct TrailRule {
    pub trail_name: String,
    pub pattern: String,
    regex: Regex,
}

impl TrailRule {
    pub fn new(trail_name: impl Into<String>, pattern: impl Into<String>) -> Result<Self, IngestError> {
        let trail_name = trail_name.into();
        let pattern = pattern.into();
        let regex = RegexBuilder::new(&pattern)
            .case_insensitive(true)
            .build()
            .map_err(|source| IngestError::Pattern { trail: trail_name.clone(), source })?;
        Ok(TrailRule { trail_name, pattern, regex })
    }

    pub fn matches(&self, package_name: &str) -> bool {
        self.regex.is_match(package_name)
    }
}

impl PartialEq for TrailRule {
    fn eq(&self, other: &Self) -> bool {
        self.trail_name == other.trail_name && self.pattern == other.pattern
    }
}

pub fn assign_trails(package_name: &str, rules: &[TrailRule]) -> BTreeSet<String> {
    rules.iter().filter(|r| r.matches(package_name)).map(|r| r.trail_name.clone()).collect()
}

/// The first four characters of the trail name, lowercased (the whole name if shorter).
pub fn default_pattern(trail_name: &str) -> String {
    let prefix: String = trail_name.chars().take(4).collect::<String>().to_lowercase();
    regex::escape(&prefix)
}

pub fn default_rules<S: AsRef<str>>(trail_names: &[S]) -> Vec<TrailRule> {
    trail_names
        .iter()
        .map(|n| TrailRule::new(n.as_ref(), default_pattern(n.as_ref())).expect("escaped literal compiles"))
        .collect()
}
