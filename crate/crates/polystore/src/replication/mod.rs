//! Replication: quorum coordination over a preference list, read repair,
//! anti-entropy, a leader/follower mode with elections, and client session
//! guarantees.
//!
//! The message-driven parts run inside the cluster simulator; this module
//! holds the state machines and the pure decision functions they use.

mod antientropy;
mod config;
mod leader;
mod quorum;
mod replica;
mod session;

pub use antientropy::{anti_entropy_sync, digest_of, plan_exchange, ExchangePlan, KeyDigest};
pub use config::{BucketConfig, QuorumConfig, WriteMode};
pub use leader::{
    elect_primary, ElectionError, LeaderEvent, LeaderGroup, LeaderMsg, LeaderState, Member, OpId,
    OplogEntry, Role, DEFAULT_OPLOG_CAPACITY, MAX_AUTO_FAILOVER_MEMBERS,
};
pub use quorum::{merge_responses, read_repair, ReadOutcome, ReadTracker, WriteTracker};
pub use replica::{ReplicaStore, META_BUCKET};
pub use session::{SessionGuarantee, SessionState};

use thiserror::Error;

use crate::hashring::NodeId;
use crate::storage::StorageError;
use crate::versioning::VersionError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplicationError {
    #[error("quorum unreachable: needed {needed} replicas, got {got}")]
    QuorumUnreachable { needed: usize, got: usize },
    #[error("{0}")]
    StaleWrite(String),
    #[error("node is not the primary (primary: {})", hint.as_ref().map_or("unknown", |h| h.as_str()))]
    NotPrimary { hint: Option<NodeId> },
    #[error("no primary elected")]
    NoPrimary,
    #[error("no voter majority reachable")]
    NoQuorum,
    #[error("{members} members exceed the automatic failover limit")]
    ManualFailoverRequired { members: usize },
    #[error("session guarantee not met after {attempts} attempts")]
    GuaranteeTimeout { attempts: usize },
    #[error("node `{0}` is unavailable")]
    Unavailable(NodeId),
    #[error("invalid replication config: {0}")]
    InvalidConfig(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl From<StorageError> for ReplicationError {
    fn from(e: StorageError) -> Self {
        ReplicationError::Storage(e.to_string())
    }
}

impl From<VersionError> for ReplicationError {
    fn from(e: VersionError) -> Self {
        match e {
            VersionError::StaleWrite { .. } => ReplicationError::StaleWrite(e.to_string()),
            VersionError::EmptyInput => ReplicationError::Storage(e.to_string()),
        }
    }
}

impl From<ElectionError> for ReplicationError {
    fn from(e: ElectionError) -> Self {
        match e {
            ElectionError::NoQuorum => ReplicationError::NoQuorum,
            ElectionError::ManualFailoverRequired { members } => {
                ReplicationError::ManualFailoverRequired { members }
            }
        }
    }
}
