//! Document collections over the cluster: find, projection, group.
//!
//!     cargo run --example documents

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::datamodels::{Documents, Fixture};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = Cluster::new(ClusterConfig::new(&["n1", "n2", "n3"]))?;
    let docs = Documents::new("automobili", "n1");
    docs.load(&mut c, &Fixture::automobili())?;

    for d in docs.find(&mut c, "autovetture", &[("modello", json!("Punto"))], None)? {
        println!("{d}");
    }
    // The two-step join: find the producer, then its cars.
    let fiat = docs.find(&mut c, "produttori", &[("marca", json!("Fiat"))], Some(&["marca", "citta"]))?;
    println!("{}", fiat[0]);
    let cars = docs.find(&mut c, "autovetture", &[("marca", json!("Fiat"))], Some(&["modello", "alimentazione"]))?;
    println!("fiat cars: {}", cars.len());
    for (fuel, n) in docs.group(&mut c, "autovetture", "alimentazione")? {
        println!("{}: {n}", fuel.as_str().unwrap_or("?"));
    }
    let id = docs.insert(&mut c, "autovetture", &json!({"_id": 9, "marca": "Fiat", "modello": "Panda"}))?;
    println!("inserted {id}; collections {:?}", docs.collections(&mut c)?);
    Ok(())
}
