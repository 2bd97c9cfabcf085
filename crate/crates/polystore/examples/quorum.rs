//! N/R/W quorums over a simulated three-node cluster.
//!
//!     cargo run --example quorum

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::hashring::NodeId;
use polystore::replication::{BucketConfig, QuorumConfig};
use polystore::versioning::VectorClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ClusterConfig::new(&["a", "b", "c"])
        .with_seed(1)
        .with_bucket(BucketConfig::new("strict", QuorumConfig::new(3, 1, 3)?));
    let mut c = Cluster::new(cfg)?;
    let (a, b, cc) = (NodeId::from("a"), NodeId::from("b"), NodeId::from("c"));

    let clock = c.put(&a, "cars", b"punto", b"benzina", &VectorClock::new())?;
    println!("n=3 r=2 w=2 write acknowledged at {clock}");
    let read = c.get(&b, "cars", b"punto")?;
    println!("read via b: {} from {} replicas", String::from_utf8_lossy(read.values()[0]), read.responders);

    // A blind write is stale: the caller never saw the current version.
    if let Err(e) = c.put(&b, "cars", b"punto", b"gpl", &VectorClock::new()) {
        println!("blind write: {e}");
    }

    c.crash_node(&cc)?;
    println!("c down; majority write still works: {}", c.update(&a, "cars", b"punto", b"gpl")?);
    match c.put(&a, "strict", b"k", b"v", &VectorClock::new()) {
        Err(e) => println!("w=3 with a replica down: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
