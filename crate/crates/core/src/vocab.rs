//! Shared label vocabulary so scene class names and P&ID symbol names land
//! in the same attribute space.
//!
//! File format: one canonical label per line, or `alias=canonical`. Blank
//! lines and `#` comments are ignored.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{AlignmentGraph, NodeKind};

pub const PIPE_RUN_FEATURE: &str = "pipe-run";
pub const PIPE_JUNCTION_FEATURE: &str = "pipe-junction";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    labels: Vec<String>,
    aliases: BTreeMap<String, String>,
}

pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

impl Vocabulary {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::default();
        for l in labels {
            v.push(&normalize_label(l.as_ref()));
        }
        v
    }

    /// Sorted union of the equipment labels of the given graphs.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a AlignmentGraph>) -> Self {
        let labels: BTreeSet<String> = graphs
            .into_iter()
            .flat_map(|g| g.nodes().iter())
            .filter(|n| n.attr.kind == NodeKind::Equipment)
            .map(|n| normalize_label(&n.attr.label))
            .collect();
        Self::new(labels)
    }

    pub fn parse(text: &str) -> Self {
        let mut v = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((alias, canonical)) => {
                    let canonical = normalize_label(canonical);
                    v.push(&canonical);
                    v.aliases.insert(normalize_label(alias), canonical);
                }
                None => v.push(&normalize_label(line)),
            }
        }
        v
    }

    fn push(&mut self, label: &str) {
        if !label.is_empty() && !self.labels.iter().any(|l| l == label) {
            self.labels.push(label.to_owned());
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Lowercases, trims and resolves aliases. Returns the label and whether
    /// it is part of the vocabulary.
    pub fn resolve(&self, label: &str) -> (String, bool) {
        let norm = normalize_label(label);
        let canonical = self.aliases.get(&norm).cloned().unwrap_or(norm);
        let known = self.contains(&canonical);
        (canonical, known)
    }

    /// Feature columns: vocabulary entries, then the two pipe subkinds if the
    /// vocabulary does not already list them.
    pub fn feature_columns(&self) -> Vec<String> {
        let mut cols = self.labels.clone();
        for p in [PIPE_RUN_FEATURE, PIPE_JUNCTION_FEATURE] {
            if !self.contains(p) {
                cols.push(p.to_owned());
            }
        }
        cols
    }
}
