//! Data-model layers over the replicated store: key-value, document,
//! column-family and graph.
//!
//! Every layer is stateless apart from the node it talks through; all data
//! (including schemas and indexes) lives in cluster buckets, so any node can
//! serve any layer. Concurrent siblings inside a layer's own records are
//! resolved deterministically: value sets (indexes, adjacency) are unioned,
//! whole records pick the largest encoding.

mod columnar;
mod document;
pub mod fixture;
mod graph;
mod kv;

use thiserror::Error;

pub use columnar::{
    cf_placement_key, encode_row, CellValue, ColumnFamilies, ColumnMutation, ColumnType, KeyspaceSchema, Row,
    TableSchema,
};
pub use document::{encode_document, Documents};
pub use fixture::{Field, Fixture, FixtureRecord, AUTOMOBILI};
pub use graph::{encode_node, Graph, GraphElement, Predicate, Properties};
pub use kv::KeyValue;

use crate::cluster::{Cluster, ClusterError};
use crate::hashring::NodeId;
use crate::replication::{ReadOutcome, ReplicationError};
use crate::versioning::VectorClock;

#[derive(Debug, Error)]
pub enum DataModelError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("unknown keyspace `{0}`")]
    UnknownKeyspace(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` expects {expected}")]
    TypeMismatch { column: String, expected: ColumnType },
    #[error("cannot execute this query as it might involve data filtering; use allow_filtering")]
    IndexRequired,
    #[error("relation endpoint `{0}` does not exist")]
    DanglingEndpoint(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("fixture line {line}: {msg}")]
    Fixture { line: usize, msg: String },
    #[error("encoding: {0}")]
    Encoding(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

impl From<ReplicationError> for DataModelError {
    fn from(e: ReplicationError) -> Self {
        DataModelError::Cluster(ClusterError::Replication(e))
    }
}

impl From<serde_json::Error> for DataModelError {
    fn from(e: serde_json::Error) -> Self {
        DataModelError::Encoding(e.to_string())
    }
}

pub type Result<T, E = DataModelError> = std::result::Result<T, E>;

/// A record read back through the cluster with the context to update it.
pub(crate) struct Current {
    pub bytes: Option<Vec<u8>>,
    pub context: VectorClock,
}

pub(crate) fn pick(outcome: &ReadOutcome) -> Option<Vec<u8>> {
    outcome.values().into_iter().max().map(<[u8]>::to_vec)
}

pub(crate) fn read(cluster: &mut Cluster, via: &NodeId, bucket: &str, key: &str) -> Result<Current> {
    let outcome = cluster.get(via, bucket, key.as_bytes())?;
    Ok(Current {
        bytes: pick(&outcome),
        context: outcome.context,
    })
}

/// Union of every sibling's JSON string set.
pub(crate) fn read_set(
    cluster: &mut Cluster,
    via: &NodeId,
    bucket: &str,
    key: &str,
) -> Result<(std::collections::BTreeSet<String>, VectorClock)> {
    let outcome = cluster.get(via, bucket, key.as_bytes())?;
    let mut set = std::collections::BTreeSet::new();
    for v in outcome.values() {
        let part: std::collections::BTreeSet<String> = serde_json::from_slice(v)?;
        set.extend(part);
    }
    Ok((set, outcome.context))
}

pub(crate) fn write(
    cluster: &mut Cluster,
    via: &NodeId,
    bucket: &str,
    key: &str,
    bytes: &[u8],
    context: &VectorClock,
) -> Result<VectorClock> {
    Ok(cluster.put(via, bucket, key.as_bytes(), bytes, context)?)
}

/// Compare with digit runs read as numbers, so `car/9` sorts before `car/10`.
pub(crate) fn natural_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, x), (true, y)) => {
                let (x, y) = (x.trim_start_matches('0'), y.trim_start_matches('0'));
                x.len().cmp(&y.len()).then_with(|| x.cmp(y))
            }
            ((_, x), (_, y)) => x.cmp(y),
        };
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

/// Keys of a bucket in natural order.
pub(crate) fn sorted_keys(cluster: &mut Cluster, via: &NodeId, bucket: &str) -> Result<Vec<String>> {
    let mut keys: Vec<String> = cluster
        .list_keys(via, bucket)?
        .into_iter()
        .map(|k| String::from_utf8_lossy(&k).into_owned())
        .collect();
    keys.sort_by(|a, b| natural_cmp(a, b));
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::natural_cmp;
    use std::cmp::Ordering;

    #[test]
    fn natural_order() {
        assert_eq!(natural_cmp("n/9", "n/10"), Ordering::Less);
        assert_eq!(natural_cmp("a10b", "a10a"), Ordering::Greater);
        assert_eq!(natural_cmp("x", "x1"), Ordering::Less);
        assert_eq!(natural_cmp("07", "7"), Ordering::Less);
        let mut v = vec!["r2", "r10", "q", "r1"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["q", "r1", "r2", "r10"]);
    }
}
