//! Plain key/value CRUD. Updates carry the clock of the last read.
//!
//!     cargo run --example key_value

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::datamodels::KeyValue;
use polystore::versioning::VectorClock;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = Cluster::new(ClusterConfig::new(&["n1", "n2", "n3"]))?;
    let kv = KeyValue::new("n3");
    kv.put(&mut c, "utenti", b"anna", b"{\"eta\":30}", &VectorClock::new())?;
    let read = kv.get(&mut c, "utenti", b"anna")?;
    println!("read {:?} at {}", String::from_utf8_lossy(read.values()[0]), read.context);

    kv.put(&mut c, "utenti", b"anna", b"{\"eta\":31}", &read.context)?;
    if let Err(e) = kv.put(&mut c, "utenti", b"anna", b"{\"eta\":99}", &read.context) {
        println!("update with an old clock: {e}");
    }
    let now = kv.get(&mut c, "utenti", b"anna")?;
    kv.delete(&mut c, "utenti", b"anna", &now.context)?;
    println!("after delete: absent = {}", kv.get(&mut c, "utenti", b"anna")?.is_absent());
    Ok(())
}
