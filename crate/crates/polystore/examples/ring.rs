//! Partition ownership on a consistent-hashing ring, and what moves when a
//! node joins.
//!
//!     cargo run --example ring

use polystore::hashring::{add_node, build_ring, preference_list, PhysicalNode, RingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nodes: Vec<PhysicalNode> = ["node1", "node2", "node3"].into_iter().map(PhysicalNode::new).collect();
    let ring = build_ring(&nodes, RingConfig::with_partitions(64))?;
    for (node, count) in ring.partition_counts() {
        println!("{node}: {count} partitions, vnodes {:?}", ring.vnode_counts(&node));
    }

    let pl = preference_list("cars", b"punto", &ring, 3);
    println!("replicas of cars/punto: {:?}", pl.nodes.iter().map(|n| n.as_str()).collect::<Vec<_>>());

    let (bigger, moved) = add_node(&ring, PhysicalNode::new("node4"))?;
    println!("node4 joins: {} of 64 partitions move, all to node4", moved.len());
    for (node, count) in bigger.partition_counts() {
        println!("  {node}: {count}");
    }
    Ok(())
}
