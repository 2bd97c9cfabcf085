//! Property graph: filters and a one-hop match.
//!
//!     cargo run --example graph

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::datamodels::{Fixture, Graph, Predicate};
use serde_json::Value;

fn text(v: &Value) -> String {
    v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = Cluster::new(ClusterConfig::new(&["n1", "n2", "n3"]))?;
    let g = Graph::new("n2");
    let loaded = g.load(&mut c, &Fixture::automobili())?;
    println!("{loaded} elements loaded");

    let cheap = Predicate::has("modello").and(Predicate::lt("prezzo", 20000.0));
    for (id, p) in g.filter(&mut c, &cheap)? {
        println!("{id}: {} {}", text(&p["modello"]), p["prezzo"]);
    }
    for (producer, car) in g.match_neighbors(&mut c, "produttori/1")? {
        let row = [&producer["marca"], &producer["citta"], &car["modello"], &car["alimentazione"]].map(text);
        println!("{}", row.join("\t"));
    }
    if let Err(e) = g.add_relation(&mut c, "produttori/1", "autovetture/99", "produce", Default::default()) {
        println!("dangling relation refused: {e}");
    }
    Ok(())
}
