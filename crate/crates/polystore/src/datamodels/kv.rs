use super::Result;
use crate::cluster::Cluster;
use crate::hashring::NodeId;
use crate::replication::ReadOutcome;
use crate::versioning::VectorClock;

/// Plain buckets. Updates must carry the clock of the read they are based on;
/// there is no bucket-wide delete, only per-key deletes.
#[derive(Debug, Clone)]
pub struct KeyValue {
    pub via: NodeId,
}

impl KeyValue {
    pub fn new(via: impl Into<NodeId>) -> Self {
        KeyValue { via: via.into() }
    }

    pub fn put(
        &self,
        cluster: &mut Cluster,
        bucket: &str,
        key: &[u8],
        value: &[u8],
        context: &VectorClock,
    ) -> Result<VectorClock> {
        Ok(cluster.put(&self.via, bucket, key, value, context)?)
    }

    pub fn get(&self, cluster: &mut Cluster, bucket: &str, key: &[u8]) -> Result<ReadOutcome> {
        Ok(cluster.get(&self.via, bucket, key)?)
    }

    pub fn delete(&self, cluster: &mut Cluster, bucket: &str, key: &[u8], context: &VectorClock) -> Result<VectorClock> {
        Ok(cluster.delete(&self.via, bucket, key, context)?)
    }
}
