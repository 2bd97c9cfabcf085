//! Vector clocks order versions; the ones nobody dominates are siblings.
//!
//!     cargo run --example vector_clocks

use polystore::hashring::NodeId;
use polystore::versioning::{resolve_siblings, VectorClock, VersionChain, VersionedValue};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (a, b) = (NodeId::from("a"), NodeId::from("b"));
    let base = VectorClock::new().increment(&a);
    let left = base.increment(&a);
    let right = base.increment(&b);
    println!("{base} vs {left}: {:?}", base.compare(&left));
    println!("{left} vs {right}: {:?}", left.compare(&right));
    println!("merge: {}", left.merge(&right));

    let versions = [
        VersionedValue::new("v0", base.clone()),
        VersionedValue::new("benzina", left),
        VersionedValue::new("gpl", right),
    ];
    for s in resolve_siblings(&versions)? {
        println!("sibling {} @ {}", String::from_utf8_lossy(&s.value), s.clock);
    }

    // A writer must present the clock it read; anything older is stale.
    let mut chain = VersionChain::new("punto");
    let v1 = chain.put(&VectorClock::new(), "benzina", &a)?.clock.clone();
    chain.put(&v1, "gpl", &b)?;
    match chain.put(&v1, "diesel", &a) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
