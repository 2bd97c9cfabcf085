//! With r=w=1 a plain read can miss a fresh write; a read-your-writes
//! session cannot.
//!
//!     cargo run --example sessions

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::hashring::NodeId;
use polystore::replication::{BucketConfig, QuorumConfig, SessionGuarantee, SessionState};
use polystore::versioning::VectorClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ClusterConfig::new(&["a", "b", "c"])
        .with_seed(4)
        .with_bucket(BucketConfig::new("fast", QuorumConfig::new(3, 1, 1)?));
    cfg.network.min_delay = 10;
    cfg.network.max_delay = 40;
    cfg.network.client_max_delay = 1;
    let mut c = Cluster::new(cfg)?;
    let (a, b) = (NodeId::from("a"), NodeId::from("b"));

    c.put(&a, "fast", b"k", b"v1", &VectorClock::new())?;
    let plain = c.get_local(&b, "fast", b"k")?;
    println!("plain read on b right after the write: absent = {}", plain.is_absent());

    let mut session = SessionState::new(1, SessionGuarantee::ReadYourWrites);
    let ctx = c.get(&a, "fast", b"k")?.context;
    c.session_put(&mut session, &a, "fast", b"k", b"v2", &ctx)?;
    let read = c.session_get(&mut session, &b, "fast", b"k", 20)?;
    let value = String::from_utf8_lossy(read.values()[0]);
    println!("session read through b: {value} (needed {})", session.last_write_clock("fast", b"k"));
    Ok(())
}
