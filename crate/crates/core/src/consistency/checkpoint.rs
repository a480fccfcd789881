//! Round checkpoints on disk:
//!
//! ```text
//! rounds/<n>/S.json        source graph (canonical)
//! rounds/<n>/F.json        target graph (canonical)
//! rounds/<n>/mapping.json  decoded mapping, once matched
//! rounds/<n>/report.json   inconsistency report, once matched
//! ```
//!
//! Files are written to a temporary name and renamed into place, and an
//! existing file is never rewritten with different bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::graph::AlignmentGraph;
use crate::matcher::Mapping;

use super::InconsistencyReport;

pub const SOURCE_FILE: &str = "S.json";
pub const TARGET_FILE: &str = "F.json";
pub const MAPPING_FILE: &str = "mapping.json";
pub const REPORT_FILE: &str = "report.json";

pub fn round_dir(root: &Path, round: usize) -> PathBuf {
    root.join("rounds").join(round.to_string())
}

/// Atomically writes `bytes` to `path`. If the file already exists it must
/// hold exactly the same bytes.
pub fn write_once(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Ok(existing) = fs::read(path) {
        if existing == bytes {
            return Ok(());
        }
        return Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            format!("{} already written with different content", path.display()),
        ));
    }
    write_atomic(path, bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn write_graphs(root: &Path, round: usize, s: &AlignmentGraph, f: &AlignmentGraph) -> io::Result<()> {
    let dir = round_dir(root, round);
    write_once(&dir.join(SOURCE_FILE), s.to_canonical_json().as_bytes())?;
    write_once(&dir.join(TARGET_FILE), f.to_canonical_json().as_bytes())
}

/// The report is written last; its presence marks the round as matched.
pub fn write_result(root: &Path, round: usize, mapping: &Mapping, report: &InconsistencyReport) -> io::Result<()> {
    let dir = round_dir(root, round);
    write_once(&dir.join(MAPPING_FILE), mapping.to_json().as_bytes())?;
    write_once(&dir.join(REPORT_FILE), report.to_json().as_bytes())
}

#[derive(Debug, Clone)]
pub struct RoundSnapshot {
    pub round: usize,
    pub source: AlignmentGraph,
    pub target: AlignmentGraph,
    pub mapping: Option<Mapping>,
    pub report: Option<InconsistencyReport>,
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

pub fn read_round(root: &Path, round: usize) -> io::Result<RoundSnapshot> {
    let dir = round_dir(root, round);
    let source = AlignmentGraph::from_json(&fs::read_to_string(dir.join(SOURCE_FILE))?).map_err(invalid)?;
    let target = AlignmentGraph::from_json(&fs::read_to_string(dir.join(TARGET_FILE))?).map_err(invalid)?;
    // a mapping without its report is an interrupted round
    let report: Option<InconsistencyReport> = match fs::read_to_string(dir.join(REPORT_FILE)) {
        Ok(t) => Some(serde_json::from_str(&t).map_err(invalid)?),
        Err(e) if e.kind() == io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    let mapping = match (&report, fs::read_to_string(dir.join(MAPPING_FILE))) {
        (Some(_), Ok(t)) => Some(serde_json::from_str(&t).map_err(invalid)?),
        _ => None,
    };
    Ok(RoundSnapshot { round, source, target, mapping, report })
}

/// Highest round number with both graphs present.
pub fn latest_round(root: &Path) -> io::Result<Option<usize>> {
    let dir = root.join("rounds");
    if !dir.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let Some(n) = entry.file_name().to_str().and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        if entry.path().join(SOURCE_FILE).exists() && entry.path().join(TARGET_FILE).exists() {
            best = best.max(Some(n));
        }
    }
    Ok(best)
}
