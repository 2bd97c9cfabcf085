use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::record::{decode, Decoded};
use super::{Backend, BackendKind, RecordKind, Result, StorageError, StorageRecord};

pub const DEFAULT_ROTATE_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy)]
pub struct LogOptions {
    /// Seal the active file and start a new one once it reaches this size.
    pub rotate_bytes: u64,
}

impl Default for LogOptions {
    fn default() -> Self {
        LogOptions {
            rotate_bytes: DEFAULT_ROTATE_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Location {
    file_id: u32,
    offset: u64,
    len: u32,
    sequence: u64,
}

struct ActiveFile {
    id: u32,
    writer: BufWriter<File>,
    size: u64,
}

/// Append-only log files plus an in-memory index pointing every live key at
/// its newest record. Acknowledged means flushed to the file.
pub struct LogBackend {
    dir: PathBuf,
    options: LogOptions,
    readers: BTreeMap<u32, File>,
    active: ActiveFile,
    index: BTreeMap<String, BTreeMap<Vec<u8>, Location>>,
    next_sequence: u64,
}

fn file_name(id: u32) -> String {
    format!("{id:08}.log")
}

fn list_log_files(dir: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(".log") {
            if let Ok(id) = stem.parse::<u32>() {
                files.push((id, path));
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Scan one file. Returns its records with offsets and the length of the
/// valid prefix. A bad frame is tolerated only at the very end of the last
/// file (a torn write); anywhere else it is interior corruption.
fn scan_file(path: &Path, is_last: bool) -> Result<(Vec<(u64, StorageRecord)>, u64)> {
    let bytes = fs::read(path)?;
    let mut records = Vec::new();
    let mut at = 0usize;
    let mut last_seq = None;
    while at < bytes.len() {
        match decode(&bytes[at..]) {
            Decoded::Record(record, used) => {
                if last_seq.is_some_and(|s| record.sequence <= s) {
                    return Err(StorageError::CorruptInterior {
                        file: path.to_path_buf(),
                        offset: at as u64,
                    });
                }
                last_seq = Some(record.sequence);
                records.push((at as u64, record));
                at += used;
            }
            Decoded::Truncated if is_last => break,
            Decoded::Corrupt(used) if is_last && at + used == bytes.len() => break,
            Decoded::Truncated | Decoded::Corrupt(_) => {
                return Err(StorageError::CorruptInterior {
                    file: path.to_path_buf(),
                    offset: at as u64,
                })
            }
        }
    }
    Ok((records, at as u64))
}

impl LogBackend {
    /// Open (and recover) the log in `dir`, creating the directory if needed.
    pub fn open(dir: impl AsRef<Path>, options: LogOptions) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let files = list_log_files(&dir)?;
        let mut index: BTreeMap<String, BTreeMap<Vec<u8>, Location>> = BTreeMap::new();
        let mut readers = BTreeMap::new();
        let mut next_sequence = 0;
        let mut last = (0u32, 0u64);
        for (i, (id, path)) in files.iter().enumerate() {
            let is_last = i + 1 == files.len();
            let (records, valid_len) = scan_file(path, is_last)?;
            for (offset, record) in records {
                next_sequence = next_sequence.max(record.sequence + 1);
                let loc = Location {
                    file_id: *id,
                    offset,
                    len: record.encoded_len() as u32,
                    sequence: record.sequence,
                };
                match record.kind {
                    RecordKind::Put => {
                        index.entry(record.bucket).or_default().insert(record.key, loc);
                    }
                    RecordKind::Delete => {
                        if let Some(b) = index.get_mut(&record.bucket) {
                            b.remove(&record.key);
                            if b.is_empty() {
                                index.remove(&record.bucket);
                            }
                        }
                    }
                }
            }
            if is_last && valid_len < fs::metadata(path)?.len() {
                // Drop the torn tail so later appends start on a frame boundary.
                OpenOptions::new().write(true).open(path)?.set_len(valid_len)?;
            }
            readers.insert(*id, File::open(path)?);
            last = (*id, valid_len);
        }
        let active_id = if files.is_empty() { 0 } else { last.0 };
        let active = Self::open_active(&dir, active_id)?;
        if files.is_empty() {
            readers.insert(active_id, File::open(dir.join(file_name(active_id)))?);
        }
        Ok(LogBackend {
            dir,
            options,
            readers,
            active: ActiveFile {
                size: last.1,
                ..active
            },
            index,
            next_sequence,
        })
    }

    fn open_active(dir: &Path, id: u32) -> Result<ActiveFile> {
        let path = dir.join(file_name(id));
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let size = file.metadata()?.len();
        Ok(ActiveFile {
            id,
            writer: BufWriter::new(file),
            size,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file_ids(&self) -> Vec<u32> {
        self.readers.keys().copied().collect()
    }

    /// Sum of all log file sizes.
    pub fn disk_size(&self) -> Result<u64> {
        let mut total = 0;
        for (_, path) in list_log_files(&self.dir)? {
            total += fs::metadata(path)?.len();
        }
        Ok(total)
    }

    fn append(&mut self, kind: RecordKind, bucket: &str, key: &[u8], payload: &[u8]) -> Result<Location> {
        if self.active.size >= self.options.rotate_bytes {
            self.rotate()?;
        }
        let record = StorageRecord::new(self.next_sequence, kind, bucket, key, payload);
        let bytes = record.encode()?;
        self.active.writer.write_all(&bytes)?;
        self.active.writer.flush()?;
        let loc = Location {
            file_id: self.active.id,
            offset: self.active.size,
            len: bytes.len() as u32,
            sequence: record.sequence,
        };
        self.active.size += bytes.len() as u64;
        self.next_sequence += 1;
        Ok(loc)
    }

    fn rotate(&mut self) -> Result<()> {
        self.active.writer.flush()?;
        let id = self.active.id + 1;
        self.active = Self::open_active(&self.dir, id)?;
        self.readers.insert(id, File::open(self.dir.join(file_name(id)))?);
        Ok(())
    }

    fn read_at(&self, loc: &Location) -> Result<StorageRecord> {
        let file = self.readers.get(&loc.file_id).ok_or_else(|| StorageError::CorruptInterior {
            file: self.dir.join(file_name(loc.file_id)),
            offset: loc.offset,
        })?;
        let mut buf = vec![0u8; loc.len as usize];
        file.read_exact_at(&mut buf, loc.offset)?;
        match decode(&buf) {
            Decoded::Record(record, _) => Ok(record),
            _ => Err(StorageError::CorruptInterior {
                file: self.dir.join(file_name(loc.file_id)),
                offset: loc.offset,
            }),
        }
    }

    /// Every valid record across all files in log order.
    pub fn records(&self) -> Result<Vec<StorageRecord>> {
        let files = list_log_files(&self.dir)?;
        let mut out = Vec::new();
        for (i, (_, path)) in files.iter().enumerate() {
            let (records, _) = scan_file(path, i + 1 == files.len())?;
            out.extend(records.into_iter().map(|(_, r)| r));
        }
        Ok(out)
    }

    /// Rewrite the log keeping only the newest record of every live key.
    /// Deleted keys vanish entirely. Sequence numbers are preserved.
    pub fn compact_log(&mut self) -> Result<()> {
        self.active.writer.flush()?;
        let mut live: Vec<(Location, StorageRecord)> = Vec::new();
        for keys in self.index.values() {
            for loc in keys.values() {
                live.push((*loc, self.read_at(loc)?));
            }
        }
        live.sort_by_key(|(loc, _)| loc.sequence);

        let old_files = list_log_files(&self.dir)?;
        let new_id = old_files.last().map(|(id, _)| id + 1).unwrap_or(0);
        let tmp = self.dir.join(format!("{new_id:08}.compact"));
        let mut index: BTreeMap<String, BTreeMap<Vec<u8>, Location>> = BTreeMap::new();
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            let mut offset = 0u64;
            for (loc, record) in &live {
                let bytes = record.encode()?;
                out.write_all(&bytes)?;
                index.entry(record.bucket.clone()).or_default().insert(
                    record.key.clone(),
                    Location {
                        file_id: new_id,
                        offset,
                        len: bytes.len() as u32,
                        sequence: loc.sequence,
                    },
                );
                offset += bytes.len() as u64;
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(file_name(new_id)))?;
        for (_, path) in &old_files {
            fs::remove_file(path)?;
        }
        self.readers.clear();
        self.active = Self::open_active(&self.dir, new_id)?;
        self.readers
            .insert(new_id, File::open(self.dir.join(file_name(new_id)))?);
        self.index = index;
        Ok(())
    }
}

impl Backend for LogBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LogStructured
    }

    fn put(&mut self, bucket: &str, key: &[u8], payload: &[u8]) -> Result<()> {
        let loc = self.append(RecordKind::Put, bucket, key, payload)?;
        self.index
            .entry(bucket.to_string())
            .or_default()
            .insert(key.to_vec(), loc);
        Ok(())
    }

    fn get(&self, bucket: &str, key: &[u8]) -> Result<Option<Vec<u8>>> {
        match self.index.get(bucket).and_then(|b| b.get(key)) {
            Some(loc) => Ok(Some(self.read_at(loc)?.payload)),
            None => Ok(None),
        }
    }

    fn delete(&mut self, bucket: &str, key: &[u8]) -> Result<()> {
        self.append(RecordKind::Delete, bucket, key, &[])?;
        if let Some(b) = self.index.get_mut(bucket) {
            b.remove(key);
            if b.is_empty() {
                self.index.remove(bucket);
            }
        }
        Ok(())
    }

    fn keys(&self, bucket: &str) -> Result<Vec<Vec<u8>>> {
        Ok(self
            .index
            .get(bucket)
            .map(|b| b.keys().cloned().collect())
            .unwrap_or_default())
    }

    fn buckets(&self) -> Vec<String> {
        self.index.keys().cloned().collect()
    }

    fn compact(&mut self) -> Result<()> {
        self.compact_log()
    }
}
