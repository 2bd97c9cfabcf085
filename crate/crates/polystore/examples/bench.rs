//! Bulk inserts with one, ten and twenty writers, sent to one node or
//! spread over all three. Prints CSV.
//!
//!     cargo run --release --example bench

use polystore::bench::{bench_cluster, emit_csv, read_back, run_bench, Layer, Policy, WorkloadSpec};
use polystore::hashring::NodeId;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut results = Vec::new();
    for writers in [1, 10, 20] {
        for policy in [Policy::Single, Policy::Balanced] {
            let spec = WorkloadSpec::new(Layer::Kv, 2000, writers, policy, 7);
            let mut cluster = bench_cluster(7)?;
            let result = run_bench(&spec, &mut cluster)?;
            let found = read_back(&mut cluster, &result, &NodeId::from("node2"))?;
            eprintln!("{writers} writers {policy}: {found}/{} read back", result.acked.len());
            results.push(result);
        }
    }
    emit_csv(&results, std::io::stdout().lock())?;
    Ok(())
}
