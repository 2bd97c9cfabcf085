use std::fmt;

use crate::hashring::NodeId;
use crate::replication::{KeyDigest, LeaderMsg, ReadOutcome};
use crate::versioning::{VectorClock, VersionedValue};

use super::membership::GossipDigest;

/// Client request id, unique within a cluster run.
pub type ReqId = u64;

pub type KeyRecords = Vec<(Vec<u8>, Vec<VersionedValue>)>;

/// Everything nodes say to each other.
#[derive(Debug, Clone)]
pub enum Message {
    Gossip { digest: GossipDigest, reply: bool },
    ReplicaWrite {
        req: ReqId,
        bucket: String,
        key: Vec<u8>,
        expected: VectorClock,
        version: VersionedValue,
    },
    ReplicaWriteAck { req: ReqId, accepted: bool },
    ReplicaRead { req: ReqId, bucket: String, key: Vec<u8> },
    ReplicaReadReply { req: ReqId, versions: Vec<VersionedValue> },
    Repair { bucket: String, key: Vec<u8>, versions: Vec<VersionedValue> },
    ListKeys { req: ReqId, bucket: String },
    ListKeysReply { req: ReqId, keys: Vec<Vec<u8>> },
    AeDigest { req: ReqId, bucket: String, digest: KeyDigest },
    AeReply { req: ReqId, bucket: String, send: KeyRecords, want: Vec<Vec<u8>> },
    AeRecords { req: ReqId, bucket: String, records: KeyRecords },
    AeDone { req: ReqId },
    /// Ownership moved with a ring change; the receiver is a new replica.
    Handoff { bucket: String, records: KeyRecords },
    Leader(LeaderMsg),
}

impl Message {
    /// Housekeeping traffic (membership, heartbeats, votes) that does not
    /// count as pending work when deciding quiescence.
    pub fn is_background(&self) -> bool {
        matches!(
            self,
            Message::Gossip { .. }
                | Message::Leader(
                    LeaderMsg::Heartbeat { .. }
                        | LeaderMsg::HeartbeatAck { .. }
                        | LeaderMsg::RequestVote { .. }
                        | LeaderMsg::Vote { .. }
                )
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Gossip { .. } => "Gossip",
            Message::ReplicaWrite { .. } => "ReplicaWrite",
            Message::ReplicaWriteAck { .. } => "ReplicaWriteAck",
            Message::ReplicaRead { .. } => "ReplicaRead",
            Message::ReplicaReadReply { .. } => "ReplicaReadReply",
            Message::Repair { .. } => "Repair",
            Message::ListKeys { .. } => "ListKeys",
            Message::ListKeysReply { .. } => "ListKeysReply",
            Message::AeDigest { .. } => "AeDigest",
            Message::AeReply { .. } => "AeReply",
            Message::AeRecords { .. } => "AeRecords",
            Message::AeDone { .. } => "AeDone",
            Message::Handoff { .. } => "Handoff",
            Message::Leader(m) => m.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientOp {
    Put {
        bucket: String,
        key: Vec<u8>,
        value: Vec<u8>,
        expected: VectorClock,
    },
    Delete {
        bucket: String,
        key: Vec<u8>,
        expected: VectorClock,
    },
    /// Quorum read; in leader mode, a read of whichever member receives it.
    Get { bucket: String, key: Vec<u8> },
    /// Read only the receiving node's replica.
    GetLocal { bucket: String, key: Vec<u8> },
    /// Leader mode: read that fails unless the receiver is primary.
    PrimaryGet { bucket: String, key: Vec<u8> },
    ListKeys { bucket: String },
    AntiEntropy { peer: NodeId, bucket: String },
}

impl fmt::Display for ClientOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientOp::Put { bucket, key, expected, .. } => {
                write!(f, "put\t{bucket}\t{}\t[{expected}]", key.escape_ascii())
            }
            ClientOp::Delete { bucket, key, expected } => {
                write!(f, "delete\t{bucket}\t{}\t[{expected}]", key.escape_ascii())
            }
            ClientOp::Get { bucket, key } => write!(f, "get\t{bucket}\t{}", key.escape_ascii()),
            ClientOp::GetLocal { bucket, key } => {
                write!(f, "get-local\t{bucket}\t{}", key.escape_ascii())
            }
            ClientOp::PrimaryGet { bucket, key } => {
                write!(f, "get-primary\t{bucket}\t{}", key.escape_ascii())
            }
            ClientOp::ListKeys { bucket } => write!(f, "keys\t{bucket}"),
            ClientOp::AntiEntropy { peer, bucket } => write!(f, "sync\t{peer}\t{bucket}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientReply {
    Written(VectorClock),
    Read(ReadOutcome),
    Keys(Vec<Vec<u8>>),
    Synced(usize),
}

impl fmt::Display for ClientReply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientReply::Written(clock) => write!(f, "written\t[{clock}]"),
            ClientReply::Read(out) => {
                let values: Vec<String> = out
                    .siblings
                    .iter()
                    .map(|v| v.value.escape_ascii().to_string())
                    .collect();
                write!(f, "read\t[{}]\t{}", out.context, values.join("|"))
            }
            ClientReply::Keys(keys) => write!(f, "keys\t{}", keys.len()),
            ClientReply::Synced(n) => write!(f, "synced\t{n}"),
        }
    }
}
