//! Wide rows with sparse columns, and selects gated by secondary indexes.
//!
//!     cargo run --example column_families

use polystore::cluster::{Cluster, ClusterConfig};
use polystore::datamodels::{CellValue, ColumnFamilies, ColumnMutation, ColumnType, Fixture, TableSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut c = Cluster::new(ClusterConfig::new(&["n1", "n2", "n3"]))?;
    let cf = ColumnFamilies::new("n1");
    cf.load(&mut c, &Fixture::automobili(), "automobili", 3)?;

    let utilitaria = ("tipologia", CellValue::from("Utilitaria"));
    if let Err(e) = cf.select(&mut c, "automobili", "autovetture", std::slice::from_ref(&utilitaria), false) {
        println!("without an index: {e}");
    }
    cf.create_index(&mut c, "automobili", "autovetture", "tipologia")?;
    for row in cf.select(&mut c, "automobili", "autovetture", std::slice::from_ref(&utilitaria), false)? {
        println!("{} {} {}", row["marca"], row["modello"], row["prezzo"]);
    }
    let fiat = ("marca", CellValue::from("Fiat"));
    let n = cf.count(&mut c, "automobili", "autovetture", &[utilitaria, fiat], true)?;
    println!("Fiat utility cars (allow filtering): {n}");

    // Columns that were never set take no space in the stored row.
    let table = TableSchema::new("utenti", "ui", ColumnType::Int)
        .column_in("anagrafica", "nome", ColumnType::Text)
        .column_in("extra", "hobby", ColumnType::Text);
    cf.create_table(&mut c, "automobili", table)?;
    cf.upsert(&mut c, "automobili", "utenti", &CellValue::Int(1), &[ColumnMutation::Set("nome".into(), "Anna".into())])?;
    let raw = cf.raw_row(&mut c, "automobili", "utenti", &CellValue::Int(1))?.unwrap_or_default();
    println!("stored row: {}", String::from_utf8_lossy(&raw));
    Ok(())
}
