use std::collections::{BTreeMap, BTreeSet};

use super::ReplicationError;
use crate::hashring::NodeId;
use crate::versioning::{VectorClock, VersionedValue};

/// Result of a quorum read.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadOutcome {
    /// Live siblings; empty when the key is absent or deleted.
    pub siblings: Vec<VersionedValue>,
    /// Merge of every clock seen, tombstones included. Hand this back as the
    /// expected clock of the next write.
    pub context: VectorClock,
    pub responders: usize,
}

impl ReadOutcome {
    pub fn from_versions(versions: &[VersionedValue], responders: usize) -> Self {
        let mut context = VectorClock::new();
        for v in versions {
            context.merge_in(&v.clock);
        }
        ReadOutcome {
            siblings: versions.iter().filter(|v| !v.tombstone).cloned().collect(),
            context,
            responders,
        }
    }

    pub fn is_absent(&self) -> bool {
        self.siblings.is_empty()
    }

    pub fn values(&self) -> Vec<&[u8]> {
        self.siblings.iter().map(|v| v.value.as_slice()).collect()
    }
}

/// Maximal versions across every replica response.
pub fn merge_responses<'a, I>(responses: I) -> Vec<VersionedValue>
where
    I: IntoIterator<Item = &'a Vec<VersionedValue>>,
{
    let all: Vec<VersionedValue> = responses.into_iter().flatten().cloned().collect();
    crate::versioning::resolve_siblings(&all).unwrap_or_default()
}

fn clock_set(versions: &[VersionedValue]) -> BTreeSet<String> {
    versions.iter().map(|v| v.clock.canonical()).collect()
}

/// Repairs owed after a read: every responder whose sibling set differs from
/// the merged set receives the merged set.
pub fn read_repair(
    responses: &BTreeMap<NodeId, Vec<VersionedValue>>,
) -> Vec<(NodeId, Vec<VersionedValue>)> {
    let merged = merge_responses(responses.values());
    if merged.is_empty() {
        return Vec::new();
    }
    let want = clock_set(&merged);
    responses
        .iter()
        .filter(|(_, versions)| clock_set(versions) != want)
        .map(|(node, _)| (node.clone(), merged.clone()))
        .collect()
}

/// Coordinator bookkeeping for one replicated write.
#[derive(Debug, Clone)]
pub struct WriteTracker {
    targets: Vec<NodeId>,
    needed: usize,
    acks: BTreeSet<NodeId>,
    stale: BTreeSet<NodeId>,
    decided: bool,
}

impl WriteTracker {
    pub fn new(targets: Vec<NodeId>, needed: usize) -> Self {
        WriteTracker {
            targets,
            needed,
            acks: BTreeSet::new(),
            stale: BTreeSet::new(),
            decided: false,
        }
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    pub fn acks(&self) -> usize {
        self.acks.len()
    }

    pub fn is_decided(&self) -> bool {
        self.decided
    }

    /// Everyone answered; nothing more will arrive.
    pub fn is_complete(&self) -> bool {
        self.acks.len() + self.stale.len() >= self.targets.len()
    }

    /// Record one replica's answer. Returns the client outcome the first time
    /// it becomes known.
    pub fn on_reply(&mut self, from: &NodeId, accepted: bool) -> Option<Result<(), ReplicationError>> {
        if !self.targets.contains(from) || self.acks.contains(from) || self.stale.contains(from) {
            return None;
        }
        if accepted {
            self.acks.insert(from.clone());
        } else {
            self.stale.insert(from.clone());
        }
        if self.decided {
            return None;
        }
        if self.acks.len() >= self.needed {
            self.decided = true;
            return Some(Ok(()));
        }
        if self.stale.len() > self.targets.len().saturating_sub(self.needed) {
            self.decided = true;
            return Some(Err(ReplicationError::StaleWrite(format!(
                "{} of {} replicas hold versions the writer has not seen",
                self.stale.len(),
                self.targets.len()
            ))));
        }
        None
    }

    pub fn on_timeout(&mut self) -> Option<Result<(), ReplicationError>> {
        if self.decided {
            return None;
        }
        self.decided = true;
        Some(Err(ReplicationError::QuorumUnreachable {
            needed: self.needed,
            got: self.acks.len(),
        }))
    }
}

/// Coordinator bookkeeping for one quorum read. Stays open after answering
/// the client so late responses still feed read repair.
#[derive(Debug, Clone)]
pub struct ReadTracker {
    targets: Vec<NodeId>,
    needed: usize,
    responses: BTreeMap<NodeId, Vec<VersionedValue>>,
    answered: bool,
}

impl ReadTracker {
    pub fn new(targets: Vec<NodeId>, needed: usize) -> Self {
        ReadTracker {
            targets,
            needed,
            responses: BTreeMap::new(),
            answered: false,
        }
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    pub fn responses(&self) -> &BTreeMap<NodeId, Vec<VersionedValue>> {
        &self.responses
    }

    pub fn is_complete(&self) -> bool {
        self.responses.len() >= self.targets.len()
    }

    pub fn on_reply(&mut self, from: &NodeId, versions: Vec<VersionedValue>) -> Option<ReadOutcome> {
        if !self.targets.contains(from) || self.responses.contains_key(from) {
            return None;
        }
        self.responses.insert(from.clone(), versions);
        if !self.answered && self.responses.len() >= self.needed {
            self.answered = true;
            let merged = merge_responses(self.responses.values());
            return Some(ReadOutcome::from_versions(&merged, self.responses.len()));
        }
        None
    }

    pub fn on_timeout(&mut self) -> Option<ReplicationError> {
        if self.answered {
            return None;
        }
        self.answered = true;
        Some(ReplicationError::QuorumUnreachable {
            needed: self.needed,
            got: self.responses.len(),
        })
    }

    pub fn repairs(&self) -> Vec<(NodeId, Vec<VersionedValue>)> {
        read_repair(&self.responses)
    }
}
