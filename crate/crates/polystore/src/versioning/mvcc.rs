use serde::{Deserialize, Serialize};

use super::clock::{Causality, VectorClock};
use super::VersionError;
use crate::hashring::NodeId;

pub const DEFAULT_RETENTION_LIMIT: usize = 10;

/// One stored version of a key. Tombstones carry no payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionedValue {
    pub value: Vec<u8>,
    pub clock: VectorClock,
    pub tombstone: bool,
}

impl VersionedValue {
    pub fn new(value: impl Into<Vec<u8>>, clock: VectorClock) -> Self {
        VersionedValue {
            value: value.into(),
            clock,
            tombstone: false,
        }
    }

    pub fn tombstone(clock: VectorClock) -> Self {
        VersionedValue {
            value: Vec::new(),
            clock,
            tombstone: true,
        }
    }
}

/// Keep only versions no other version dominates. Equal clocks collapse to
/// one entry. Output is sorted by canonical clock encoding.
pub fn resolve_siblings(versions: &[VersionedValue]) -> Result<Vec<VersionedValue>, VersionError> {
    if versions.is_empty() {
        return Err(VersionError::EmptyInput);
    }
    Ok(maximal(versions))
}

pub(crate) fn maximal(versions: &[VersionedValue]) -> Vec<VersionedValue> {
    let mut out: Vec<VersionedValue> = Vec::new();
    'candidates: for v in versions {
        let mut i = 0;
        while i < out.len() {
            match v.clock.compare(&out[i].clock) {
                Causality::Before | Causality::Equal => continue 'candidates,
                Causality::After => {
                    out.swap_remove(i);
                }
                Causality::Concurrent => i += 1,
            }
        }
        out.push(v.clone());
    }
    out.sort_by_cached_key(|v| v.clock.canonical());
    out
}

/// Versions of one key, oldest first, bounded by `retention_limit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionChain {
    pub key: Vec<u8>,
    versions: Vec<VersionedValue>,
    pub retention_limit: usize,
}

impl VersionChain {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        Self::with_retention(key, DEFAULT_RETENTION_LIMIT)
    }

    pub fn with_retention(key: impl Into<Vec<u8>>, retention_limit: usize) -> Self {
        VersionChain {
            key: key.into(),
            versions: Vec::new(),
            retention_limit: retention_limit.max(1),
        }
    }

    pub fn versions(&self) -> &[VersionedValue] {
        &self.versions
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn head(&self) -> Option<&VersionedValue> {
        self.versions.last()
    }

    /// The current sibling set: every stored version nothing else dominates.
    pub fn siblings(&self) -> Vec<VersionedValue> {
        maximal(&self.versions)
    }

    /// Merge of every stored clock. This is the clock a reader must hand back
    /// to overwrite the key.
    pub fn current_clock(&self) -> VectorClock {
        let mut clock = VectorClock::new();
        for v in &self.versions {
            clock.merge_in(&v.clock);
        }
        clock
    }

    /// Compare-and-append: succeeds only when `expected` equals the current
    /// clock, i.e. nobody wrote since the caller read.
    pub fn put(
        &mut self,
        expected: &VectorClock,
        value: impl Into<Vec<u8>>,
        writer: &NodeId,
    ) -> Result<&VersionedValue, VersionError> {
        let clock = self.check_head(expected)?.increment(writer);
        self.push(VersionedValue::new(value, clock));
        Ok(self.versions.last().expect("just pushed"))
    }

    pub fn delete(
        &mut self,
        expected: &VectorClock,
        writer: &NodeId,
    ) -> Result<&VersionedValue, VersionError> {
        let clock = self.check_head(expected)?.increment(writer);
        self.push(VersionedValue::tombstone(clock));
        Ok(self.versions.last().expect("just pushed"))
    }

    fn check_head(&self, expected: &VectorClock) -> Result<VectorClock, VersionError> {
        let current = self.current_clock();
        if current.compare(expected) != Causality::Equal {
            return Err(VersionError::StaleWrite {
                expected: expected.canonical(),
                current: current.canonical(),
            });
        }
        Ok(current)
    }

    /// Replica-side acceptance of a version minted by a coordinator from
    /// `expected`. A replica that is merely behind accepts; one holding a
    /// version the writer never saw rejects.
    pub fn apply_replicated(
        &mut self,
        expected: &VectorClock,
        version: VersionedValue,
    ) -> Result<(), VersionError> {
        if self.versions.iter().any(|v| v.clock == version.clock) {
            return Ok(());
        }
        let current = self.current_clock();
        if !expected.descends(&current) {
            return Err(VersionError::StaleWrite {
                expected: expected.canonical(),
                current: current.canonical(),
            });
        }
        self.push(version);
        Ok(())
    }

    /// Unconditionally fold foreign versions in (repair, anti-entropy, handoff).
    /// Returns true when the sibling set changed.
    pub fn merge_versions(&mut self, incoming: &[VersionedValue]) -> bool {
        let before = self.siblings();
        for v in incoming {
            if !self.versions.iter().any(|mine| mine.clock == v.clock) {
                self.versions.push(v.clone());
            }
        }
        self.prune();
        self.siblings() != before
    }

    fn push(&mut self, version: VersionedValue) {
        self.versions.push(version);
        self.prune();
    }

    /// Drop the oldest dominated versions until within the retention limit.
    /// Current siblings are never dropped.
    fn prune(&mut self) {
        while self.versions.len() > self.retention_limit {
            let siblings = maximal(&self.versions);
            let victim = self
                .versions
                .iter()
                .position(|v| !siblings.iter().any(|s| s.clock == v.clock));
            match victim {
                Some(i) => {
                    self.versions.remove(i);
                }
                None => break,
            }
        }
    }
}

pub fn mvcc_put(
    mut chain: VersionChain,
    expected: &VectorClock,
    value: impl Into<Vec<u8>>,
    writer: &NodeId,
) -> Result<VersionChain, VersionError> {
    chain.put(expected, value, writer)?;
    Ok(chain)
}

/// A single counter per data block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimisticLock {
    pub version: u64,
}

impl OptimisticLock {
    pub fn try_advance(&mut self, expected_version: u64) -> Result<u64, VersionError> {
        if expected_version != self.version {
            return Err(VersionError::StaleWrite {
                expected: expected_version.to_string(),
                current: self.version.to_string(),
            });
        }
        self.version += 1;
        Ok(self.version)
    }
}

pub fn optimistic_put(
    lock: OptimisticLock,
    expected_version: u64,
) -> Result<OptimisticLock, VersionError> {
    let mut next = lock;
    next.try_advance(expected_version)?;
    Ok(next)
}
