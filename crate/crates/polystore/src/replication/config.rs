use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ReplicationError;

/// Replicas per key and the read/write quorums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub n: usize,
    pub r: usize,
    pub w: usize,
}

impl QuorumConfig {
    pub fn new(n: usize, r: usize, w: usize) -> Result<Self, ReplicationError> {
        let cfg = QuorumConfig { n, r, w };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ReplicationError> {
        if self.n == 0 || self.r == 0 || self.w == 0 || self.r > self.n || self.w > self.n {
            return Err(ReplicationError::InvalidConfig(format!(
                "need 1 <= r,w <= n, got n={} r={} w={}",
                self.n, self.r, self.w
            )));
        }
        Ok(())
    }

    /// Read and write quorums intersect.
    pub fn is_strict(&self) -> bool {
        self.r + self.w > self.n
    }
}

impl Default for QuorumConfig {
    fn default() -> Self {
        QuorumConfig { n: 3, r: 2, w: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WriteMode {
    /// Acknowledge once `w` replicas confirmed.
    #[default]
    Sync,
    /// Acknowledge after the first durable replica write; the rest follows.
    Async,
}

impl FromStr for WriteMode {
    type Err = ReplicationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sync" => Ok(WriteMode::Sync),
            "async" => Ok(WriteMode::Async),
            other => Err(ReplicationError::InvalidConfig(format!(
                "unknown write mode `{other}`"
            ))),
        }
    }
}

impl fmt::Display for WriteMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WriteMode::Sync => f.write_str("sync"),
            WriteMode::Async => f.write_str("async"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketConfig {
    pub name: String,
    pub quorum: QuorumConfig,
    pub write_mode: WriteMode,
}

impl BucketConfig {
    pub fn new(name: impl Into<String>, quorum: QuorumConfig) -> Self {
        BucketConfig {
            name: name.into(),
            quorum,
            write_mode: WriteMode::Sync,
        }
    }

    pub fn with_mode(mut self, write_mode: WriteMode) -> Self {
        self.write_mode = write_mode;
        self
    }
}
