//! One lossy simulator run per register variant.

use casss::node::MS;
use casss::sim::{run_scenario, FaultKind, FaultSpec, NodeRef, ScenarioConfig};
use casss::{OpKind, Outcome, Variant};

fn main() -> casss::Result<()> {
    for v in Variant::ALL {
        let mut sc = ScenarioConfig::new(v, 5, 1, 4).with_roles(2, 2);
        sc.seed = 7;
        sc.ops_per_client = 25;
        sc.object_size = 64 * 1024;
        sc.link.loss = 0.1;
        sc.link.dup = 0.05;
        sc.link.reorder = 0.1;
        sc.faults.push(FaultSpec { at: 800 * MS, kind: FaultKind::Crash, target: NodeRef::Server(3) });
        let r = run_scenario(&sc)?;
        let mean = |kind| {
            let l: Vec<u64> = r.history.ops.iter().filter(|o| o.kind == kind && o.outcome == Outcome::Ok).filter_map(|o| o.latency()).collect();
            l.iter().sum::<u64>() as f64 / l.len().max(1) as f64 / MS as f64
        };
        println!(
            "{:<6} ops {:>3}  write {:>6.1} ms  read {:>6.1} ms  {:>9} bytes  {:>5} lost  linearizable {}  digest {}",
            v.name(),
            r.history.ops.len(),
            mean(OpKind::Write),
            mean(OpKind::Read),
            r.metrics.bytes(),
            r.metrics.lost,
            r.history.check().map(|v| v.is_ok()).unwrap_or(false),
            &r.hash()[..12]
        );
    }
    Ok(())
}
