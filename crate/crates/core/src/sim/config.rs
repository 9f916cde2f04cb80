//! Simulator configuration, read from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{default_pattern, TrailRule};
use crate::model::{MAX_NEW_TRAILS_PER_BLOCK, MAX_PACKAGES_PER_BLOCK};
use crate::pod::DEFAULT_CHUNK_LENGTH;

/// Key of the download range used by trails without their own entry.
pub const OTHERS: &str = "others";

/// Trails whose pattern is the first four characters of their name.
#[rustfmt::skip]
pub const ROSTER_TRAILS: &[&str] = &[
    "ALTLinux", "Ark Linux", "BasicLinux", "BioKnoppix",
    "CentOS", "Conectiva", "Cucumber Linux", "Debian", "Zenwalk Linux",
    "Devil-Linux", "Dyne:Bolic", "Feather", "Floppix",
    "Freesco", "Frugalware", "Gentoo", "Gnoppix",
    "IPCop", "Kanotix", "Knoppix", "Kurumin",
    "Linux Scratch", "Lycoris", "Manjaro", "Morphix",
    "Pardus", "PHLAK", "Puppy Linux", "Red Hat Ent",
    "SLAX", "Source Mage", "SuSE", "TopologiLinux",
    "Turkix", "Univention Corp", "Whitebox Linux", "Yoper",
    "Amigo Linux", "BackTrack", "BeatrIX", "BLAG",
    "ClusterKnoppix", "CRUX", "DamnSmallLinux", "DeLi Linux",
    "DragOnLinux", "Elive", "Fedora", "Foresight",
    "Freespire", "G2Linx", "Goodgoat", "GoboLinux",
    "IpodLinux", "Kate OS", "Kubuntu", "Linspire",
    "Lunar Linux", "Mandriva", "MEPIS", "muLinux",
    "PCLinuxOS", "PocketLinux", "Red Hat", "Slackware",
    "SmoothWall", "Sun JDS", "SystemRescue", "TurboLinux",
    "Ubuntu Linux", "VectorLinux", "Yellow Dog", "Xandros",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrailSpec {
    pub name: String,
    /// Regular expression over package names; defaults to the first four
    /// characters of the name, lowercased.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

impl TrailSpec {
    pub fn new(name: &str, pattern: Option<&str>) -> Self {
        TrailSpec { name: name.into(), pattern: pattern.map(str::to_string) }
    }

    pub fn effective_pattern(&self) -> String {
        self.pattern.clone().unwrap_or_else(|| default_pattern(&self.name))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub master_seed: u64,
    pub block_interval_minutes: u64,
    pub genesis_offset_minutes: u64,
    pub max_packages_per_block: usize,
    pub max_new_trails_per_block: usize,
    /// `(k, p)`: vouch `k` blocks after publication with probability `p`.
    pub vouch_offsets: Vec<(u64, f64)>,
    /// Inclusive per-interval download range per trail, with an `others` fallback.
    pub download_ranges: BTreeMap<String, (u64, u64)>,
    pub trails: Vec<TrailSpec>,
    pub users_per_trail: usize,
    /// Trail requested in the genesis block.
    pub bootstrap_trail: String,
    pub pod_chunk_length: usize,
    /// Keep producing blocks until at least this height, events or not.
    pub min_blocks: u64,
    /// Genesis timestamp when the timeline is empty.
    pub empty_genesis_timestamp: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut trails = vec![
            TrailSpec::new("archlinux", Some(".*")),
            TrailSpec::new("perl", Some("perl")),
            TrailSpec::new("pypy", Some("py")),
            TrailSpec::new("ruby", Some("rb")),
        ];
        trails.extend(ROSTER_TRAILS.iter().map(|n| TrailSpec::new(n, None)));
        let download_ranges = BTreeMap::from([
            ("archlinux".to_string(), (200_000, 300_000)),
            ("pypy".to_string(), (10_000, 400_000)),
            ("perl".to_string(), (100_000, 100_500)),
            ("ruby".to_string(), (100_000, 100_900)),
            (OTHERS.to_string(), (0, 100_000)),
        ]);
        SimConfig {
            master_seed: 0,
            block_interval_minutes: 20,
            genesis_offset_minutes: 40,
            max_packages_per_block: MAX_PACKAGES_PER_BLOCK,
            max_new_trails_per_block: MAX_NEW_TRAILS_PER_BLOCK,
            vouch_offsets: vec![(1, 0.6), (2, 0.2), (3, 0.1), (4, 0.1)],
            download_ranges,
            trails,
            users_per_trail: 70,
            bootstrap_trail: "archlinux".into(),
            pod_chunk_length: DEFAULT_CHUNK_LENGTH,
            min_blocks: 0,
            empty_genesis_timestamp: 1_000_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn interval_seconds(&self) -> u64 {
        self.block_interval_minutes * 60
    }

    pub fn max_vouch_offset(&self) -> u64 {
        self.vouch_offsets.iter().map(|(k, _)| *k).max().unwrap_or(0)
    }

    pub fn download_range(&self, trail: &str) -> (u64, u64) {
        self.download_ranges.get(trail).or_else(|| self.download_ranges.get(OTHERS)).copied().unwrap_or((0, 0))
    }

    pub fn rules(&self) -> Result<Vec<TrailRule>, ConfigError> {
        self.trails
            .iter()
            .map(|t| {
                TrailRule::new(t.name.clone(), t.effective_pattern()).map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.block_interval_minutes == 0 {
            return bad("block_interval_minutes must be positive".into());
        }
        if self.max_packages_per_block == 0 || self.max_packages_per_block > MAX_PACKAGES_PER_BLOCK {
            return bad(format!("max_packages_per_block must be in 1..={MAX_PACKAGES_PER_BLOCK}"));
        }
        if self.max_new_trails_per_block == 0 || self.max_new_trails_per_block > MAX_NEW_TRAILS_PER_BLOCK {
            return bad(format!("max_new_trails_per_block must be in 1..={MAX_NEW_TRAILS_PER_BLOCK}"));
        }
        if self.vouch_offsets.is_empty() {
            return bad("vouch_offsets is empty".into());
        }
        let mut seen = BTreeSet::new();
        for (k, p) in &self.vouch_offsets {
            if *k == 0 || !seen.insert(*k) {
                return bad(format!("vouch offset {k} must be positive and unique"));
            }
            if !p.is_finite() || *p < 0.0 {
                return bad(format!("vouch probability for offset {k} must be non-negative"));
            }
        }
        let sum: f64 = self.vouch_offsets.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("vouch probabilities sum to {sum}, not 1"));
        }
        for (name, (lo, hi)) in &self.download_ranges {
            if lo > hi {
                return bad(format!("download range for {name} has min {lo} > max {hi}"));
            }
        }
        if self.trails.is_empty() {
            return bad("no trails configured".into());
        }
        let mut names = BTreeSet::new();
        for t in &self.trails {
            if t.name.is_empty() || !names.insert(t.name.as_str()) {
                return bad(format!("trail name {:?} is empty or repeated", t.name));
            }
            if !self.download_ranges.contains_key(&t.name) && !self.download_ranges.contains_key(OTHERS) {
                return bad(format!("no download range for {} and no `{OTHERS}` entry", t.name));
            }
        }
        self.rules()?;
        if !names.contains(self.bootstrap_trail.as_str()) {
            return bad(format!("bootstrap trail {} is not configured", self.bootstrap_trail));
        }
        if self.users_per_trail == 0 {
            return bad("users_per_trail must be positive".into());
        }
        if self.pod_chunk_length == 0 {
            return bad("pod_chunk_length must be positive".into());
        }
        if self.empty_genesis_timestamp == 0 {
            return bad("empty_genesis_timestamp must be positive".into());
        }
        Ok(())
    }
}
