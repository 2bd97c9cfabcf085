//! Drive the simulator from a plain-text script.
//!
//!     cargo run --example scenario

use polystore::cluster::scenario::Scenario;

const SCRIPT: &str = "
@nodes a b c
@seed 7
@bucket users 3 2 2
0   put users alice v1 via=a
10  crash c
20  put users alice v2 via=b
30  expect users alice v2 via=a
40  recover c
50  sync
60  expect users alice v2 via=c
70  converged
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = Scenario::parse(SCRIPT)?.run()?;
    for line in &report.steps {
        println!("{line}");
    }
    println!("{} trace events, passed: {}", report.trace.len(), report.passed());
    Ok(())
}
