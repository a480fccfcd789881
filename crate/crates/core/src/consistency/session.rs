//! The match → detect → resolve cycle.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::graph::{AlignmentGraph, GraphEdit};
use crate::matcher::{extract_mapping, match_graphs_with, Mapping, MatchConfig};
use crate::vocab::Vocabulary;

use super::{checkpoint, get_inconsistencies, ConsistencyError, Inconsistency, InconsistencyReport, Status};

pub const DEFAULT_MAX_ROUNDS: usize = 50;

/// What the human (or a scripted stand-in) decided for one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Resolution {
    pub source_edits: Vec<GraphEdit>,
    pub target_edits: Vec<GraphEdit>,
    /// Inconsistency ids to accept as-is.
    pub accept: Vec<String>,
    /// (source id, target id) correspondences to favour in later rounds.
    pub pins: Vec<(String, String)>,
}

impl Resolution {
    pub fn is_empty(&self) -> bool {
        self.source_edits.is_empty() && self.target_edits.is_empty() && self.accept.is_empty() && self.pins.is_empty()
    }
}

pub struct RoundContext<'a> {
    pub round: usize,
    pub report: &'a InconsistencyReport,
    pub mapping: &'a Mapping,
    pub source: &'a AlignmentGraph,
    pub target: &'a AlignmentGraph,
}

pub trait EditProvider {
    fn resolve(&mut self, ctx: &RoundContext<'_>) -> Resolution;
}

impl<F> EditProvider for F
where
    F: FnMut(&RoundContext<'_>) -> Resolution,
{
    fn resolve(&mut self, ctx: &RoundContext<'_>) -> Resolution {
        self(ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub source_version: u64,
    pub target_version: u64,
    pub report: InconsistencyReport,
    /// Items open in the previous round that are no longer detected.
    pub resolved: Vec<Inconsistency>,
    pub resolution: Option<Resolution>,
}

/// Graphs and pins after a resolution.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub source: AlignmentGraph,
    pub target: AlignmentGraph,
    pub pins: Vec<(String, String)>,
}

/// Validates and applies `res` against the open items of the last report.
/// Accepted ids must be open; edits are applied all-or-nothing; pins must
/// name live nodes. Earlier pins on deleted nodes are dropped and a new pin
/// replaces any older pin of the same source node.
pub fn resolve(
    source: &AlignmentGraph,
    target: &AlignmentGraph,
    open: &[Inconsistency],
    pins: &[(String, String)],
    res: &Resolution,
) -> Result<Resolved, ConsistencyError> {
    let open_ids: BTreeSet<&str> = open.iter().filter(|i| i.is_open()).map(|i| i.id.as_str()).collect();
    if let Some(bad) = res.accept.iter().find(|id| !open_ids.contains(id.as_str())) {
        return Err(ConsistencyError::UnknownInconsistency(bad.clone()));
    }
    let source =
        source.apply_edits(&res.source_edits).map_err(|e| ConsistencyError::Edit { graph: "source", source: e })?;
    let target =
        target.apply_edits(&res.target_edits).map_err(|e| ConsistencyError::Edit { graph: "target", source: e })?;
    for (s, f) in &res.pins {
        if !source.contains(s) {
            return Err(ConsistencyError::UnknownPin(s.clone()));
        }
        if !target.contains(f) {
            return Err(ConsistencyError::UnknownPin(f.clone()));
        }
    }
    let mut next: Vec<(String, String)> = pins
        .iter()
        .filter(|(s, f)| source.contains(s) && target.contains(f))
        .filter(|(s, _)| !res.pins.iter().any(|(ns, _)| ns == s))
        .cloned()
        .collect();
    next.extend(res.pins.iter().cloned());
    Ok(Resolved { source, target, pins: next })
}

#[derive(Debug, Clone)]
pub struct AlignmentSession {
    pub project_id: String,
    source: AlignmentGraph,
    target: AlignmentGraph,
    mapping: Option<Mapping>,
    open: Vec<Inconsistency>,
    accepted: BTreeSet<String>,
    pins: Vec<(String, String)>,
    history: Vec<RoundRecord>,
    pub vocab: Option<Vocabulary>,
    pub checkpoint_dir: Option<PathBuf>,
    pub max_rounds: usize,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub mapping: Mapping,
    pub accepted: Vec<Inconsistency>,
    /// Number of matching rounds performed.
    pub rounds: usize,
}

impl AlignmentSession {
    pub fn new(project_id: impl Into<String>, source: AlignmentGraph, target: AlignmentGraph) -> Self {
        Self {
            project_id: project_id.into(),
            source,
            target,
            mapping: None,
            open: Vec::new(),
            accepted: BTreeSet::new(),
            pins: Vec::new(),
            history: Vec::new(),
            vocab: None,
            checkpoint_dir: None,
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn source(&self) -> &AlignmentGraph {
        &self.source
    }

    pub fn target(&self) -> &AlignmentGraph {
        &self.target
    }

    pub fn mapping(&self) -> Option<&Mapping> {
        self.mapping.as_ref()
    }

    pub fn open_inconsistencies(&self) -> &[Inconsistency] {
        &self.open
    }

    pub fn accepted(&self) -> &BTreeSet<String> {
        &self.accepted
    }

    pub fn pins(&self) -> &[(String, String)] {
        &self.pins
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    /// Replays the recorded edits from the given initial graphs; the result
    /// must equal the current graphs.
    pub fn replay(
        &self,
        source: &AlignmentGraph,
        target: &AlignmentGraph,
    ) -> Result<(AlignmentGraph, AlignmentGraph), ConsistencyError> {
        let mut s = source.clone();
        let mut f = target.clone();
        for r in self.history.iter().filter_map(|r| r.resolution.as_ref()) {
            s = s.apply_edits(&r.source_edits).map_err(|e| ConsistencyError::Edit { graph: "source", source: e })?;
            f = f.apply_edits(&r.target_edits).map_err(|e| ConsistencyError::Edit { graph: "target", source: e })?;
        }
        Ok((s, f))
    }

    /// Applies a resolution atomically: on any error the session is left as
    /// it was.
    pub fn apply_resolution(&mut self, res: &Resolution) -> Result<(), ConsistencyError> {
        let next = resolve(&self.source, &self.target, &self.open, &self.pins, res)?;
        self.source = next.source;
        self.target = next.target;
        self.pins = next.pins;
        self.accepted.extend(res.accept.iter().cloned());
        if let Some(last) = self.history.last_mut() {
            last.resolution = Some(res.clone());
        }
        Ok(())
    }

    /// Matches the current graphs, detects inconsistencies and records the
    /// round. Returns the report.
    pub fn match_round(&mut self, cfg: &MatchConfig) -> Result<InconsistencyReport, ConsistencyError> {
        let round = self.history.len();
        let coupling =
            match_graphs_with(&self.source, &self.target, cfg, &self.pins, self.vocab.as_ref(), &mut |_| {})?;
        let mapping = extract_mapping(&coupling);
        let items = get_inconsistencies(&mapping, &self.source, &self.target, &self.accepted);
        let report = InconsistencyReport { round, items };

        if let Some(dir) = &self.checkpoint_dir {
            checkpoint::write_graphs(dir, round, &self.source, &self.target)?;
            checkpoint::write_result(dir, round, &mapping, &report)?;
        }

        let now: BTreeSet<&str> = report.items.iter().map(|i| i.id.as_str()).collect();
        let resolved = self
            .open
            .iter()
            .filter(|i| !now.contains(i.id.as_str()))
            .map(|i| Inconsistency { status: Status::Resolved, ..i.clone() })
            .collect();
        self.open = report.items.iter().filter(|i| i.is_open()).cloned().collect();
        self.history.push(RoundRecord {
            round,
            source_version: self.source.version(),
            target_version: self.target.version(),
            report: report.clone(),
            resolved,
            resolution: None,
        });
        self.mapping = Some(mapping);
        Ok(report)
    }
}

/// Runs match → detect → resolve until no open inconsistency remains or
/// `session.max_rounds` matching rounds have been spent.
pub fn run_alignment_loop(
    session: &mut AlignmentSession,
    cfg: &MatchConfig,
    provider: &mut dyn EditProvider,
) -> Result<LoopOutcome, ConsistencyError> {
    for done in 1..=session.max_rounds {
        let report = session.match_round(cfg)?;
        let mapping = session.mapping.clone().expect("mapping set by match_round");
        if report.open_count() == 0 {
            let accepted = report.items.iter().filter(|i| i.status == Status::Accepted).cloned().collect();
            return Ok(LoopOutcome { mapping, accepted, rounds: done });
        }
        if done == session.max_rounds {
            break;
        }
        let resolution = provider.resolve(&RoundContext {
            round: report.round,
            report: &report,
            mapping: &mapping,
            source: &session.source,
            target: &session.target,
        });
        session.apply_resolution(&resolution)?;
    }
    Err(ConsistencyError::MaxRoundsExceeded(session.max_rounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeAttribute, Provenance};

    fn path(p: Provenance, prefix: &str, labels: &[&str]) -> AlignmentGraph {
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("{prefix}{i}")).collect();
        AlignmentGraph::new(
            p,
            ids.iter().zip(labels).map(|(id, l)| (id.clone(), NodeAttribute::equipment(*l))),
            ids.windows(2).map(|w| (w[0].clone(), w[1].clone())),
        )
        .unwrap()
    }

    #[test]
    fn consistent_pair_converges_in_one_round() {
        let s = path(Provenance::Scene, "s", &["tank", "valve", "pump", "filter"]);
        let f = path(Provenance::Functional, "f", &["tank", "valve", "pump", "filter"]);
        let mut session = AlignmentSession::new("p", s, f);
        let mut never = |_: &RoundContext<'_>| -> Resolution { panic!("no resolution expected") };
        let out = run_alignment_loop(&mut session, &MatchConfig::default(), &mut never).unwrap();
        assert_eq!(out.rounds, 1);
        assert!(out.accepted.is_empty());
        assert_eq!(out.mapping.target_of("s2"), Some("f2"));
    }

    #[test]
    fn idle_provider_hits_round_cap() {
        let s = path(Provenance::Scene, "s", &["tank", "valve"]);
        let f = path(Provenance::Functional, "f", &["tank", "valve", "pump"]);
        let mut session = AlignmentSession::new("p", s, f);
        session.max_rounds = 3;
        let mut idle = |_: &RoundContext<'_>| Resolution::default();
        let err = run_alignment_loop(&mut session, &MatchConfig::default(), &mut idle).unwrap_err();
        assert!(matches!(err, ConsistencyError::MaxRoundsExceeded(3)));
        assert_eq!(session.history().len(), 3);
    }

    #[test]
    fn bad_edit_rolls_back() {
        let s = path(Provenance::Scene, "s", &["tank", "valve"]);
        let f = path(Provenance::Functional, "f", &["tank", "valve", "pump"]);
        let mut session = AlignmentSession::new("p", s.clone(), f.clone());
        let mut bad = |_: &RoundContext<'_>| Resolution {
            source_edits: vec![
                GraphEdit::AddNode { id: "s9".into(), attr: NodeAttribute::equipment("pump") },
                GraphEdit::AddEdge { a: "s9".into(), b: "ghost".into() },
            ],
            ..Resolution::default()
        };
        let err = run_alignment_loop(&mut session, &MatchConfig::default(), &mut bad).unwrap_err();
        assert!(matches!(err, ConsistencyError::Edit { graph: "source", .. }));
        assert_eq!(session.source(), &s);
        assert_eq!(session.target(), &f);
    }

    #[test]
    fn accepting_unknown_item_is_rejected() {
        let s = path(Provenance::Scene, "s", &["tank", "valve"]);
        let f = path(Provenance::Functional, "f", &["tank", "valve", "pump"]);
        let mut session = AlignmentSession::new("p", s, f);
        session.match_round(&MatchConfig::default()).unwrap();
        let res = Resolution { accept: vec!["unmatched_target:nope".into()], ..Resolution::default() };
        assert!(matches!(session.apply_resolution(&res), Err(ConsistencyError::UnknownInconsistency(_))));
    }
}
