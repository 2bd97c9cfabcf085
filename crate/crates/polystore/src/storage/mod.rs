//! Per-node storage backends.
//!
//! Both backends expose the same [`Backend`] surface over `(bucket, key)`
//! pairs holding opaque payloads. [`LogBackend`] is an append-only log with an
//! in-memory hash index, rebuilt from the log on open.

mod log;
mod memory;
mod record;

use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use self::log::{LogBackend, LogOptions, DEFAULT_ROTATE_BYTES};
pub use self::memory::MemoryBackend;
pub use self::record::{RecordKind, StorageRecord};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("corrupt record inside {file} at offset {offset}")]
    CorruptInterior { file: PathBuf, offset: u64 },
    #[error("record field too large: {0}")]
    TooLarge(&'static str),
}

pub type Result<T> = std::result::Result<T, StorageError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Memory,
    LogStructured,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Memory => f.write_str("memory"),
            BackendKind::LogStructured => f.write_str("log"),
        }
    }
}

/// A single-writer key/payload store. Absent keys read as `None`.
pub trait Backend: Send {
    fn kind(&self) -> BackendKind;

    fn put(&mut self, bucket: &str, key: &[u8], payload: &[u8]) -> Result<()>;

    fn get(&self, bucket: &str, key: &[u8]) -> Result<Option<Vec<u8>>>;

    fn delete(&mut self, bucket: &str, key: &[u8]) -> Result<()>;

    /// Live keys of `bucket` in byte order.
    fn keys(&self, bucket: &str) -> Result<Vec<Vec<u8>>>;

    /// Buckets holding at least one live key, sorted.
    fn buckets(&self) -> Vec<String>;

    /// Drop superseded records. A no-op for backends without garbage.
    fn compact(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Render records as `seq<TAB>kind<TAB>bucket<TAB>key<TAB>payload_len<TAB>checksum`.
pub fn dump_records(records: &[StorageRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:08x}\n",
            r.sequence,
            r.kind,
            r.bucket.escape_debug(),
            r.key.escape_ascii(),
            r.payload.len(),
            r.checksum
        ));
    }
    out
}
