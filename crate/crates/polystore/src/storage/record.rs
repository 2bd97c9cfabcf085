use std::fmt;

use super::{Result, StorageError};

/// Record framing on disk (little endian):
///
/// ```text
/// ┌──────────┬──────────────────────────────────────────────────────────────┬──────────┐
/// │ body_len │ body                                                         │ crc32    │
/// │   u32    │ seq u64 | kind u8 | bucket_len u16 | key_len u32 |           │   u32    │
/// │          │ payload_len u32 | bucket | key | payload                     │ (body)   │
/// └──────────┴──────────────────────────────────────────────────────────────┴──────────┘
/// ```
pub(crate) const LEN_PREFIX: usize = 4;
pub(crate) const CRC_SUFFIX: usize = 4;
const BODY_HEADER: usize = 8 + 1 + 2 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Put,
    Delete,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordKind::Put => f.write_str("put"),
            RecordKind::Delete => f.write_str("del"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageRecord {
    pub sequence: u64,
    pub kind: RecordKind,
    pub bucket: String,
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
    pub checksum: u32,
}

impl StorageRecord {
    pub fn new(sequence: u64, kind: RecordKind, bucket: &str, key: &[u8], payload: &[u8]) -> Self {
        let mut r = StorageRecord {
            sequence,
            kind,
            bucket: bucket.to_string(),
            key: key.to_vec(),
            payload: payload.to_vec(),
            checksum: 0,
        };
        r.checksum = crc32fast::hash(&r.body());
        r
    }

    fn body(&self) -> Vec<u8> {
        let mut body =
            Vec::with_capacity(BODY_HEADER + self.bucket.len() + self.key.len() + self.payload.len());
        body.extend_from_slice(&self.sequence.to_le_bytes());
        body.push(match self.kind {
            RecordKind::Put => 0,
            RecordKind::Delete => 1,
        });
        body.extend_from_slice(&(self.bucket.len() as u16).to_le_bytes());
        body.extend_from_slice(&(self.key.len() as u32).to_le_bytes());
        body.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        body.extend_from_slice(self.bucket.as_bytes());
        body.extend_from_slice(&self.key);
        body.extend_from_slice(&self.payload);
        body
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.bucket.len() > u16::MAX as usize {
            return Err(StorageError::TooLarge("bucket"));
        }
        if self.key.len() > u32::MAX as usize / 2 || self.payload.len() > u32::MAX as usize / 2 {
            return Err(StorageError::TooLarge("key or payload"));
        }
        let body = self.body();
        let mut out = Vec::with_capacity(LEN_PREFIX + body.len() + CRC_SUFFIX);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&self.checksum.to_le_bytes());
        Ok(out)
    }

    pub fn encoded_len(&self) -> usize {
        LEN_PREFIX + BODY_HEADER + self.bucket.len() + self.key.len() + self.payload.len() + CRC_SUFFIX
    }
}

/// Result of decoding one frame from the front of a buffer.
pub(crate) enum Decoded {
    Record(StorageRecord, usize),
    /// The buffer ends before the frame does.
    Truncated,
    /// A complete frame whose checksum or layout is wrong.
    Corrupt(usize),
}

pub(crate) fn decode(buf: &[u8]) -> Decoded {
    if buf.len() < LEN_PREFIX {
        return Decoded::Truncated;
    }
    let body_len = u32::from_le_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    let total = LEN_PREFIX + body_len + CRC_SUFFIX;
    if buf.len() < total {
        return Decoded::Truncated;
    }
    let body = &buf[LEN_PREFIX..LEN_PREFIX + body_len];
    let stored = u32::from_le_bytes(buf[LEN_PREFIX + body_len..total].try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored || body_len < BODY_HEADER {
        return Decoded::Corrupt(total);
    }
    let sequence = u64::from_le_bytes(body[0..8].try_into().expect("8 bytes"));
    let kind = match body[8] {
        0 => RecordKind::Put,
        1 => RecordKind::Delete,
        _ => return Decoded::Corrupt(total),
    };
    let bucket_len = u16::from_le_bytes(body[9..11].try_into().expect("2 bytes")) as usize;
    let key_len = u32::from_le_bytes(body[11..15].try_into().expect("4 bytes")) as usize;
    let payload_len = u32::from_le_bytes(body[15..19].try_into().expect("4 bytes")) as usize;
    if BODY_HEADER + bucket_len + key_len + payload_len != body_len {
        return Decoded::Corrupt(total);
    }
    let mut at = BODY_HEADER;
    let Ok(bucket) = std::str::from_utf8(&body[at..at + bucket_len]) else {
        return Decoded::Corrupt(total);
    };
    at += bucket_len;
    let key = body[at..at + key_len].to_vec();
    at += key_len;
    let payload = body[at..at + payload_len].to_vec();
    Decoded::Record(
        StorageRecord {
            sequence,
            kind,
            bucket: bucket.to_string(),
            key,
            payload,
            checksum: stored,
        },
        total,
    )
}
