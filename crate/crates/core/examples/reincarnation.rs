//! A client crashes and restarts twice; responses from its earlier lives are
//! delivered again and must be ignored.

use casss::node::MS;
use casss::sim::{run_scenario, FaultKind, FaultSpec, NodeRef, ScenarioConfig};
use casss::Variant;

fn main() -> casss::Result<()> {
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, 2);
    sc.ops_per_client = 20;
    sc.inter_op_delay = 50 * MS;
    sc.inc_period = 200 * MS;
    for (crash, back) in [(400, 600), (1_800, 2_000)] {
        let target = NodeRef::Client(1);
        sc.faults.push(FaultSpec { at: crash * MS, kind: FaultKind::Crash, target });
        sc.faults.push(FaultSpec { at: back * MS, kind: FaultKind::Restart, target });
        sc.faults.push(FaultSpec { at: (back + 5) * MS, kind: FaultKind::ReplayToClient, target });
    }
    let r = run_scenario(&sc)?;
    for (c, life, inc) in &r.metrics.incarnations {
        println!("client {c} life {life} runs as incarnation {inc}");
    }
    println!("{} old responses replayed, {} accepted", r.metrics.replayed, r.metrics.stale_accepts);
    println!("linearizable: {}", r.history.check().map(|v| v.is_ok()).unwrap_or(false));
    Ok(())
}
