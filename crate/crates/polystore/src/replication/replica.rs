use std::collections::BTreeMap;

use serde::{de::DeserializeOwned, Serialize};

use super::leader::Snapshot;
use super::ReplicationError;
use crate::storage::{Backend, BackendKind};
use crate::versioning::{VectorClock, VersionChain, VersionedValue, DEFAULT_RETENTION_LIMIT};

/// Reserved bucket for node metadata (counters, ring, election term).
pub const META_BUCKET: &str = "\u{0}meta";

/// Version chains of one node, persisted through a storage backend.
pub struct ReplicaStore {
    backend: Box<dyn Backend>,
    retention: usize,
}

fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>, ReplicationError> {
    bincode::serialize(value).map_err(|e| ReplicationError::Storage(e.to_string()))
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ReplicationError> {
    bincode::deserialize(bytes).map_err(|e| ReplicationError::Storage(e.to_string()))
}

impl ReplicaStore {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        ReplicaStore {
            backend,
            retention: DEFAULT_RETENTION_LIMIT,
        }
    }

    pub fn with_retention(mut self, retention: usize) -> Self {
        self.retention = retention.max(1);
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn backend_mut(&mut self) -> &mut dyn Backend {
        self.backend.as_mut()
    }

    pub fn chain(&self, bucket: &str, key: &[u8]) -> Result<VersionChain, ReplicationError> {
        match self.backend.get(bucket, key)? {
            Some(bytes) => decode(&bytes),
            None => Ok(VersionChain::with_retention(key, self.retention)),
        }
    }

    fn save(&mut self, bucket: &str, chain: &VersionChain) -> Result<(), ReplicationError> {
        let bytes = encode(chain)?;
        self.backend.put(bucket, &chain.key, &bytes)?;
        Ok(())
    }

    /// Current siblings, tombstones included.
    pub fn siblings(&self, bucket: &str, key: &[u8]) -> Result<Vec<VersionedValue>, ReplicationError> {
        Ok(self.chain(bucket, key)?.siblings())
    }

    pub fn apply_write(
        &mut self,
        bucket: &str,
        key: &[u8],
        expected: &VectorClock,
        version: VersionedValue,
    ) -> Result<(), ReplicationError> {
        let mut chain = self.chain(bucket, key)?;
        chain.apply_replicated(expected, version)?;
        self.save(bucket, &chain)
    }

    /// Fold versions in without a staleness check. Returns whether the
    /// sibling set changed.
    pub fn merge(
        &mut self,
        bucket: &str,
        key: &[u8],
        versions: &[VersionedValue],
    ) -> Result<bool, ReplicationError> {
        if versions.is_empty() {
            return Ok(false);
        }
        let mut chain = self.chain(bucket, key)?;
        let changed = chain.merge_versions(versions);
        if changed {
            self.save(bucket, &chain)?;
        }
        Ok(changed)
    }

    /// Keys stored under `bucket`, including keys whose siblings are all tombstones.
    pub fn keys(&self, bucket: &str) -> Result<Vec<Vec<u8>>, ReplicationError> {
        Ok(self.backend.keys(bucket)?)
    }

    /// Keys with at least one live (non-tombstone) sibling.
    pub fn live_keys(&self, bucket: &str) -> Result<Vec<Vec<u8>>, ReplicationError> {
        let mut out = Vec::new();
        for key in self.keys(bucket)? {
            if self.siblings(bucket, &key)?.iter().any(|v| !v.tombstone) {
                out.push(key);
            }
        }
        Ok(out)
    }

    pub fn data_buckets(&self) -> Vec<String> {
        self.backend
            .buckets()
            .into_iter()
            .filter(|b| b != META_BUCKET)
            .collect()
    }

    /// Sibling sets of every key in every data bucket.
    pub fn snapshot(&self) -> Result<Snapshot, ReplicationError> {
        let mut out = BTreeMap::new();
        for bucket in self.data_buckets() {
            let mut keys = BTreeMap::new();
            for key in self.keys(&bucket)? {
                keys.insert(key.clone(), self.siblings(&bucket, &key)?);
            }
            out.insert(bucket, keys);
        }
        Ok(out)
    }

    /// Replace all data with `snapshot`.
    pub fn replace_all(
        &mut self,
        snapshot: &BTreeMap<String, BTreeMap<Vec<u8>, Vec<VersionedValue>>>,
    ) -> Result<(), ReplicationError> {
        for bucket in self.data_buckets() {
            let incoming = snapshot.get(&bucket);
            for key in self.keys(&bucket)? {
                if incoming.is_none_or(|m| !m.contains_key(&key)) {
                    self.backend.delete(&bucket, &key)?;
                }
            }
        }
        for (bucket, keys) in snapshot {
            for (key, siblings) in keys {
                let current = self.siblings(bucket, key)?;
                if &current == siblings {
                    continue;
                }
                let mut chain = VersionChain::with_retention(key.clone(), self.retention);
                chain.merge_versions(siblings);
                self.save(bucket, &chain)?;
            }
        }
        Ok(())
    }

    pub fn get_meta<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, ReplicationError> {
        match self.backend.get(META_BUCKET, name.as_bytes())? {
            Some(bytes) => Ok(Some(decode(&bytes)?)),
            None => Ok(None),
        }
    }

    pub fn put_meta<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ReplicationError> {
        let bytes = encode(value)?;
        self.backend.put(META_BUCKET, name.as_bytes(), &bytes)?;
        Ok(())
    }
}
