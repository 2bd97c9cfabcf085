use std::collections::BTreeMap;

use super::{Backend, BackendKind, Result};

/// Ordered in-memory table.
#[derive(Debug, Default, Clone)]
pub struct MemoryBackend {
    buckets: BTreeMap<String, BTreeMap<Vec<u8>, Vec<u8>>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Backend for MemoryBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Memory
    }

    fn put(&mut self, bucket: &str, key: &[u8], payload: &[u8]) -> Result<()> {
        self.buckets
            .entry(bucket.to_string())
            .or_default()
            .insert(key.to_vec(), payload.to_vec());
        Ok(())
    }

    fn get(&self, bucket: &str, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.buckets.get(bucket).and_then(|b| b.get(key)).cloned())
    }

    fn delete(&mut self, bucket: &str, key: &[u8]) -> Result<()> {
        if let Some(b) = self.buckets.get_mut(bucket) {
            b.remove(key);
            if b.is_empty() {
                self.buckets.remove(bucket);
            }
        }
        Ok(())
    }

    fn keys(&self, bucket: &str) -> Result<Vec<Vec<u8>>> {
        Ok(self
            .buckets
            .get(bucket)
            .map(|b| b.keys().cloned().collect())
            .unwrap_or_default())
    }

    fn buckets(&self) -> Vec<String> {
        self.buckets.keys().cloned().collect()
    }
}
