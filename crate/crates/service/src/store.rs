//! On-disk projects.
//!
//! ```text
//! <root>/<project-id>/manifest.json
//! <root>/<project-id>/rounds/<n>/{S,F,mapping,report}.json
//! ```
//!
//! Round 0 holds the uploaded graphs. Matching round `n` adds its mapping
//! and report; a resolution against round `n` writes round `n + 1` and then
//! advances the manifest, which is the commit point.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pidalign_core::consistency::checkpoint::{self, RoundSnapshot};
use pidalign_core::consistency::{resolve, ConsistencyError};
use pidalign_core::graph::GraphDoc;
use pidalign_core::matcher::match_graphs_with;
use pidalign_core::{
    extract_mapping, get_inconsistencies, AlignmentGraph, InconsistencyReport, Mapping, MatchConfig, Resolution,
    Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectState {
    Idle,
    Matching,
    AwaitingResolution,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Round the resolution was submitted against.
    pub round: usize,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub config: MatchConfig,
    /// Vocabulary file contents, when one was supplied.
    #[serde(default)]
    pub vocab: Option<String>,
    pub round: usize,
    #[serde(default)]
    pub accepted: Vec<String>,
    #[serde(default)]
    pub pins: Vec<(String, String)>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct NewProject {
    pub source: GraphDoc,
    pub target: GraphDoc,
    #[serde(default)]
    pub config: MatchConfig,
    #[serde(default)]
    pub vocab: Option<String>,
}

/// Everything a matching job needs, detached from the project lock.
#[derive(Debug, Clone)]
pub struct MatchInput {
    pub round: usize,
    pub source: AlignmentGraph,
    pub target: AlignmentGraph,
    pub config: MatchConfig,
    pub pins: Vec<(String, String)>,
    pub vocab: Option<Vocabulary>,
    pub accepted: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub round: usize,
    pub mapping: Mapping,
    pub report: InconsistencyReport,
}

impl MatchInput {
    pub fn run(&self, progress: &mut dyn FnMut(usize)) -> Result<MatchOutput, ServiceError> {
        let coupling =
            match_graphs_with(&self.source, &self.target, &self.config, &self.pins, self.vocab.as_ref(), &mut |p| {
                progress(p.iteration)
            })
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mapping = extract_mapping(&coupling);
        let items = get_inconsistencies(&mapping, &self.source, &self.target, &self.accepted);
        Ok(MatchOutput { round: self.round, mapping, report: InconsistencyReport { round: self.round, items } })
    }
}

#[derive(Debug)]
pub struct Project {
    dir: PathBuf,
    manifest: Manifest,
    latest: RoundSnapshot,
}

fn io_err(e: std::io::Error) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<(), ServiceError> {
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    checkpoint::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes()).map_err(io_err)
}

impl Project {
    pub fn create(root: &Path, id: &str, req: NewProject) -> Result<Self, ServiceError> {
        let source = AlignmentGraph::from_doc(req.source).map_err(|e| ServiceError::Invalid(format!("source: {e}")))?;
        let target = AlignmentGraph::from_doc(req.target).map_err(|e| ServiceError::Invalid(format!("target: {e}")))?;
        if source.is_empty() {
            return Err(ServiceError::Invalid("source graph is empty".into()));
        }
        if target.is_empty() {
            return Err(ServiceError::Invalid("target graph is empty".into()));
        }
        req.config.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;

        let dir = root.join(id);
        fs::create_dir_all(&dir).map_err(io_err)?;
        checkpoint::write_graphs(&dir, 0, &source, &target).map_err(io_err)?;
        let manifest = Manifest {
            id: id.to_owned(),
            config: req.config,
            vocab: req.vocab,
            round: 0,
            accepted: Vec::new(),
            pins: Vec::new(),
            history: Vec::new(),
        };
        write_manifest(&dir, &manifest)?;
        let latest = RoundSnapshot { round: 0, source, target, mapping: None, report: None };
        Ok(Self { dir, manifest, latest })
    }

    /// Loads a project, discarding any round written after the last
    /// manifest commit.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ServiceError::NotFound(format!("no project at {}", dir.display())),
            _ => io_err(e),
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| ServiceError::Internal(format!("corrupt manifest: {e}")))?;
        if let Some(last) = checkpoint::latest_round(dir).map_err(io_err)? {
            for stray in manifest.round + 1..=last {
                log::warn!("project {}: dropping uncommitted round {stray}", manifest.id);
                fs::remove_dir_all(checkpoint::round_dir(dir, stray)).map_err(io_err)?;
            }
        }
        let latest = checkpoint::read_round(dir, manifest.round).map_err(io_err)?;
        Ok(Self { dir: dir.to_owned(), manifest, latest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn latest(&self) -> &RoundSnapshot {
        &self.latest
    }

    /// State as recorded on disk; `Matching` is tracked by the caller.
    pub fn settled_state(&self) -> ProjectState {
        match &self.latest.report {
            None => ProjectState::Idle,
            Some(r) if r.open_count() == 0 => ProjectState::Converged,
            Some(_) => ProjectState::AwaitingResolution,
        }
    }

    pub fn match_input(&self) -> MatchInput {
        MatchInput {
            round: self.manifest.round,
            source: self.latest.source.clone(),
            target: self.latest.target.clone(),
            config: self.manifest.config.clone(),
            pins: self.manifest.pins.clone(),
            vocab: self.manifest.vocab.as_deref().map(Vocabulary::parse),
            accepted: self.manifest.accepted.iter().cloned().collect(),
        }
    }

    pub fn commit_match(&mut self, out: MatchOutput) -> Result<(), ServiceError> {
        if out.round != self.manifest.round {
            return Err(ServiceError::Conflict(format!("match result for round {} is stale", out.round)));
        }
        checkpoint::write_result(&self.dir, out.round, &out.mapping, &out.report).map_err(io_err)?;
        self.latest.mapping = Some(out.mapping);
        self.latest.report = Some(out.report);
        Ok(())
    }

    /// Applies a resolution submitted against `round` and opens the next
    /// round. Nothing is written unless every check passes.
    pub fn submit(&mut self, round: usize, res: Resolution) -> Result<usize, ServiceError> {
        if round != self.manifest.round {
            return Err(ServiceError::Conflict(format!(
                "resolution targets round {round} but the project is at round {}",
                self.manifest.round
            )));
        }
        let Some(report) = &self.latest.report else {
            return Err(ServiceError::Conflict(format!("round {round} has not been matched")));
        };
        if report.open_count() == 0 {
            return Err(ServiceError::Conflict(format!("round {round} has no open inconsistency")));
        }
        let next = resolve(&self.latest.source, &self.latest.target, &report.items, &self.manifest.pins, &res)
            .map_err(|e| match e {
                ConsistencyError::Io(e) => io_err(e),
                other => ServiceError::Invalid(other.to_string()),
            })?;

        let new_round = round + 1;
        checkpoint::write_graphs(&self.dir, new_round, &next.source, &next.target).map_err(io_err)?;
        let mut manifest = self.manifest.clone();
        manifest.round = new_round;
        manifest.pins = next.pins;
        for id in &res.accept {
            if !manifest.accepted.contains(id) {
                manifest.accepted.push(id.clone());
            }
        }
        manifest.history.push(HistoryEntry { round, resolution: res });
        write_manifest(&self.dir, &manifest)?;

        self.manifest = manifest;
        self.latest =
            RoundSnapshot { round: new_round, source: next.source, target: next.target, mapping: None, report: None };
        Ok(new_round)
    }

    pub fn round(&self, n: usize) -> Result<RoundSnapshot, ServiceError> {
        if n > self.manifest.round {
            return Err(ServiceError::NotFound(format!("round {n} does not exist")));
        }
        checkpoint::read_round(&self.dir, n).map_err(io_err)
    }
}
