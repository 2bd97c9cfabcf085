//! Primary/secondary replication: the primary crashes, a majority elects a
//! new one, and the old primary rejoins as a secondary.
//!
//!     cargo run --example leader_failover

use polystore::cluster::{Cluster, ClusterConfig, LeaderConfig, ReplicationMode};
use polystore::hashring::NodeId;
use polystore::versioning::VectorClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ClusterConfig::new(&["a", "b", "c"])
        .with_seed(8)
        .with_mode(ReplicationMode::Leader(LeaderConfig::default()));
    let mut c = Cluster::new(cfg)?;
    let a = NodeId::from("a");
    println!("primary: {}", c.primaries()[0]);
    c.put(&a, "cars", b"punto", b"benzina", &VectorClock::new())?;
    if let Err(e) = c.update(&NodeId::from("b"), "cars", b"punto", b"gpl") {
        println!("write to a secondary: {e}");
    }

    c.run_until(c.now() + 20)?;
    c.crash_node(&a)?;
    c.run_until(c.now() + 200)?;
    let p = c.primaries()[0].clone();
    println!("after a crashed: primary {p} in term {:?}", c.term_of(&p));
    let punto = c.primary_get(&p, "cars", b"punto")?;
    println!("it still has punto = {}", String::from_utf8_lossy(punto.values()[0]));

    c.recover_node(&a)?;
    c.run_until(c.now() + 200)?;
    println!("a is back as {:?}; terms with two primaries: {:?}", c.role_of(&a), c.split_brain_terms());
    Ok(())
}
