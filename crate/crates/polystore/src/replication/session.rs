use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReplicationError;
use crate::hashring::NodeId;
use crate::versioning::VectorClock;

/// What a session's reads must reflect.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SessionGuarantee {
    #[default]
    None,
    ReadYourWrites,
    /// Read-your-writes, but only for reads issued through `scope`.
    Session { scope: NodeId },
    /// Reads reflect everything the session wrote or read before.
    Causal,
    MonotonicRead,
}

impl FromStr for SessionGuarantee {
    type Err = ReplicationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(SessionGuarantee::None),
            "ryow" | "read-your-writes" => Ok(SessionGuarantee::ReadYourWrites),
            "causal" => Ok(SessionGuarantee::Causal),
            "monotonic" | "monotonic-read" => Ok(SessionGuarantee::MonotonicRead),
            other => match other.strip_prefix("session:") {
                Some(node) if !node.is_empty() => Ok(SessionGuarantee::Session {
                    scope: NodeId::from(node),
                }),
                _ => Err(ReplicationError::InvalidConfig(format!(
                    "unknown session guarantee `{other}`"
                ))),
            },
        }
    }
}

impl fmt::Display for SessionGuarantee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionGuarantee::None => f.write_str("none"),
            SessionGuarantee::ReadYourWrites => f.write_str("ryow"),
            SessionGuarantee::Session { scope } => write!(f, "session:{scope}"),
            SessionGuarantee::Causal => f.write_str("causal"),
            SessionGuarantee::MonotonicRead => f.write_str("monotonic"),
        }
    }
}

type Slot = (String, Vec<u8>);

/// Client-side memory of what a session has written and read, per key.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: u64,
    pub guarantee: SessionGuarantee,
    last_write: BTreeMap<Slot, VectorClock>,
    last_read: BTreeMap<Slot, VectorClock>,
}

impl SessionState {
    pub fn new(session_id: u64, guarantee: SessionGuarantee) -> Self {
        SessionState {
            session_id,
            guarantee,
            ..Default::default()
        }
    }

    fn slot(bucket: &str, key: &[u8]) -> Slot {
        (bucket.to_string(), key.to_vec())
    }

    pub fn last_write_clock(&self, bucket: &str, key: &[u8]) -> VectorClock {
        self.last_write
            .get(&Self::slot(bucket, key))
            .cloned()
            .unwrap_or_default()
    }

    pub fn last_read_clock(&self, bucket: &str, key: &[u8]) -> VectorClock {
        self.last_read
            .get(&Self::slot(bucket, key))
            .cloned()
            .unwrap_or_default()
    }

    /// The clock a read through `via` has to dominate.
    pub fn required(&self, bucket: &str, key: &[u8], via: &NodeId) -> VectorClock {
        match &self.guarantee {
            SessionGuarantee::None => VectorClock::new(),
            SessionGuarantee::ReadYourWrites => self.last_write_clock(bucket, key),
            SessionGuarantee::Session { scope } if scope == via => {
                self.last_write_clock(bucket, key)
            }
            SessionGuarantee::Session { .. } => VectorClock::new(),
            SessionGuarantee::Causal => self
                .last_write_clock(bucket, key)
                .merge(&self.last_read_clock(bucket, key)),
            SessionGuarantee::MonotonicRead => self.last_read_clock(bucket, key),
        }
    }

    pub fn satisfied(&self, bucket: &str, key: &[u8], via: &NodeId, observed: &VectorClock) -> bool {
        observed.descends(&self.required(bucket, key, via))
    }

    pub fn record_read(&mut self, bucket: &str, key: &[u8], observed: &VectorClock) {
        self.last_read
            .entry(Self::slot(bucket, key))
            .or_default()
            .merge_in(observed);
    }

    pub fn record_write(&mut self, bucket: &str, key: &[u8], clock: &VectorClock) {
        self.last_write
            .entry(Self::slot(bucket, key))
            .or_default()
            .merge_in(clock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vc(s: &str) -> VectorClock {
        s.parse().unwrap()
    }

    #[test]
    fn guarantees_pick_the_right_clock() {
        let a = NodeId::from("a");
        let b = NodeId::from("b");
        let mut s = SessionState::new(1, SessionGuarantee::ReadYourWrites);
        s.record_write("bk", b"k", &vc("a:2"));
        s.record_read("bk", b"k", &vc("b:1"));
        assert!(!s.satisfied("bk", b"k", &a, &vc("a:1")));
        assert!(s.satisfied("bk", b"k", &a, &vc("a:2")));

        s.guarantee = SessionGuarantee::Session { scope: a.clone() };
        assert!(!s.satisfied("bk", b"k", &a, &vc("a:1")));
        assert!(s.satisfied("bk", b"k", &b, &vc("a:1")));

        s.guarantee = SessionGuarantee::Causal;
        assert!(!s.satisfied("bk", b"k", &a, &vc("a:2")));
        assert!(s.satisfied("bk", b"k", &a, &vc("a:2,b:1")));

        s.guarantee = SessionGuarantee::MonotonicRead;
        assert!(s.satisfied("bk", b"k", &a, &vc("b:1")));
        assert!(s.satisfied("bk", b"other", &a, &VectorClock::new()));
    }

    #[test]
    fn parse_guarantees() {
        for g in ["none", "ryow", "causal", "monotonic", "session:n1"] {
            let parsed: SessionGuarantee = g.parse().unwrap();
            assert_eq!(parsed.to_string(), g);
        }
        assert!("session:".parse::<SessionGuarantee>().is_err());
    }
}
