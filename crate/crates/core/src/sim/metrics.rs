//! Metric rows and their CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::SimResult;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockMetrics {
    pub height: u64,
    pub timestamp: u64,
    /// Size of the chain file up to and including this block.
    pub bytes: u64,
    pub packages: u64,
    pub cum_packages: u64,
    /// Empty for genesis.
    pub forger: String,
    pub forger_trail: String,
    pub popularity: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackageMetrics {
    pub name: String,
    /// `pkgver-pkgrel`.
    pub version: String,
    pub submit_ts: u64,
    pub publish_height: u64,
    /// Height of the first vouch, if any landed.
    pub vouch_height: Option<u64>,
    pub delay_minutes: Option<u64>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write metrics to {path}: {message}")]
    Write { path: String, message: String },
}

pub const BLOCKS_HEADER: [&str; 7] =
    ["height", "timestamp", "bytes", "packages", "cum_packages", "forger", "forger_trail"];
pub const POPULARITY_HEADER: [&str; 3] = ["height", "trail", "pop"];
pub const PACKAGES_HEADER: [&str; 6] =
    ["name", "version", "submit_ts", "publish_height", "vouch_height", "delay_minutes"];
pub const FORGERS_HEADER: [&str; 2] = ["trail", "blocks_forged"];

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), MetricsError> {
    let err =
        |e: &dyn std::fmt::Display| MetricsError::Write { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    w.write_record(header).map_err(|e| err(&e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

/// Writes `blocks.csv`, `popularity.csv`, `packages.csv` and `forgers.csv`
/// into `out_dir`, creating it if needed.
pub fn emit_metrics(result: &SimResult, out_dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| MetricsError::Write { path: out_dir.display().to_string(), message: e.to_string() })?;
    let blocks = out_dir.join("blocks.csv");
    write_csv(
        &blocks,
        &BLOCKS_HEADER,
        result.blocks.iter().map(|b| {
            vec![
                b.height.to_string(),
                b.timestamp.to_string(),
                b.bytes.to_string(),
                b.packages.to_string(),
                b.cum_packages.to_string(),
                b.forger.clone(),
                b.forger_trail.clone(),
            ]
        }),
    )?;
    let popularity = out_dir.join("popularity.csv");
    write_csv(
        &popularity,
        &POPULARITY_HEADER,
        result
            .blocks
            .iter()
            .flat_map(|b| b.popularity.iter().map(move |(t, p)| vec![b.height.to_string(), t.clone(), p.to_string()])),
    )?;
    let packages = out_dir.join("packages.csv");
    write_csv(
        &packages,
        &PACKAGES_HEADER,
        result.packages.iter().map(|p| {
            vec![
                p.name.clone(),
                p.version.clone(),
                p.submit_ts.to_string(),
                p.publish_height.to_string(),
                opt(p.vouch_height),
                opt(p.delay_minutes),
            ]
        }),
    )?;
    let forgers = out_dir.join("forgers.csv");
    write_csv(&forgers, &FORGERS_HEADER, result.forger_counts().into_iter().map(|(t, n)| vec![t, n.to_string()]))?;
    Ok(vec![blocks, popularity, packages, forgers])
}
