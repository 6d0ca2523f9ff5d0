//! A reduced overhead sweep written as CSV and SVG into a temporary directory.

use std::sync::atomic::AtomicBool;

use casss::bench::{run_experiment, Backend, Experiment};
use casss::node::MS;
use casss::sim::ScenarioConfig;
use casss::Variant;

fn main() -> casss::Result<()> {
    let mut base = ScenarioConfig::new(Variant::Casss, 5, 1, 2);
    base.ops_per_client = 10;
    base.inter_op_delay = 20 * MS;
    let out = std::env::temp_dir().join("casss-bench-example");
    let summary = run_experiment(Experiment::Overhead, &base, Backend::Sim, 3, &out, &AtomicBool::new(false))?;
    for row in &summary.rows {
        println!("{}", row.csv());
    }
    println!("wrote {}", out.display());
    Ok(())
}
