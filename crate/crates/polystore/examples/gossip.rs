//! Gossip notices a crashed node and spreads a new member's ring.
//!
//!     cargo run --example gossip

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::hashring::{NodeId, PhysicalNode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = Cluster::new(ClusterConfig::new(&["a", "b", "c"]).with_seed(2))?;
    let (a, c_id) = (NodeId::from("a"), NodeId::from("c"));
    c.run_until(30)?;
    c.crash_node(&c_id)?;
    for t in [40, 60, 90] {
        c.run_until(t)?;
        println!("t={t}: a sees c as {:?}", c.liveness(&a, &c_id)?);
    }
    c.recover_node(&c_id)?;

    let moved = c.add_node(PhysicalNode::new("d"), &a)?;
    println!("d joined through a and took {} partitions", moved.len());
    c.run_until(c.now() + 100)?;
    for n in c.node_ids() {
        println!("{n} ring epoch {}", c.ring_of(&n)?.epoch);
    }
    Ok(())
}
