//! The append-only log backend: writes, a torn tail after a crash, and
//! compaction.
//!
//!     cargo run --example log_store

use std::fs;

use polystore::storage::{dump_records, Backend, LogBackend, LogOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut log = LogBackend::open(dir.path(), LogOptions::default())?;
    log.put("cars", b"punto", b"benzina")?;
    log.put("cars", b"punto", b"gpl")?;
    log.put("cars", b"clio", b"benzina")?;
    log.delete("cars", b"clio")?;
    print!("{}", dump_records(&log.records()?));
    drop(log);

    // Tear the last record in half, as a crash mid-write would.
    let file = dir.path().join("00000000.log");
    let bytes = fs::read(&file)?;
    fs::write(&file, &bytes[..bytes.len() - 5])?;
    let mut log = LogBackend::open(dir.path(), LogOptions::default())?;
    let clio = log.get("cars", b"clio")?;
    println!("after the crash the torn delete is gone: clio = {:?}", clio.map(|v| String::from_utf8_lossy(&v).into_owned()));

    let before = log.disk_size()?;
    log.compact_log()?;
    let punto = log.get("cars", b"punto")?.unwrap_or_default();
    println!("compacted {before} -> {} bytes, punto = {}", log.disk_size()?, String::from_utf8_lossy(&punto));
    Ok(())
}
