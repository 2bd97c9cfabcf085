//! Both sides of a partition accept writes; after healing, anti-entropy
//! leaves every replica with the same siblings and a reader resolves them.
//!
//!     cargo run --example anti_entropy

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::hashring::NodeId;
use polystore::replication::{BucketConfig, QuorumConfig};
use polystore::versioning::VectorClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ClusterConfig::new(&["a", "b", "c"])
        .with_seed(3)
        .with_bucket(BucketConfig::new("cars", QuorumConfig::new(3, 1, 1)?));
    let mut c = Cluster::new(cfg)?;
    let (a, b) = (NodeId::from("a"), NodeId::from("b"));
    let base = c.put(&a, "cars", b"punto", b"benzina", &VectorClock::new())?;
    c.run_until_quiescent()?;

    c.partition(&[&["a"], &["b", "c"]])?;
    c.put(&a, "cars", b"punto", b"gpl", &base)?;
    c.put(&b, "cars", b"punto", b"diesel", &base)?;
    c.heal()?;
    println!("divergent before sync: {:?}", c.divergent_keys()?.len());
    let rounds = c.converge(6)?;
    println!("converged after {rounds} rounds, divergent: {}", c.divergent_keys()?.len());

    let read = c.get(&a, "cars", b"punto")?;
    let values: Vec<String> = read.values().iter().map(|v| String::from_utf8_lossy(v).into_owned()).collect();
    println!("siblings: {values:?}");
    let resolved = c.put(&a, "cars", b"punto", b"gpl", &read.context)?;
    c.run_until_quiescent()?;
    println!("resolved at {resolved}; b now holds {} version", c.get(&b, "cars", b"punto")?.values().len());
    Ok(())
}
