//! Corrupts every server's volatile state at time zero and checks the
//! operations that follow recovery.

use casss::linearizability::{check, Limits, RegState};
use casss::node::MS;
use casss::sim::{run_scenario, FaultKind, FaultSpec, NodeRef, ScenarioConfig};
use casss::Variant;

fn main() -> casss::Result<()> {
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, 3);
    sc.seed = 5;
    sc.ops_per_client = 15;
    sc.warmup_ops = 2;
    sc.settle = 1_000 * MS;
    sc.quorum.bounds.max_int = 256;
    sc.quorum.bounds.max_inc = 64;
    for s in 0..5 {
        for kind in [FaultKind::CorruptStore, FaultKind::CorruptChannel, FaultKind::CorruptResetState, FaultKind::CorruptIncarnation] {
            sc.faults.push(FaultSpec { at: 0, kind, target: NodeRef::Server(s) });
        }
    }
    let r = run_scenario(&sc)?;
    let from = r.metrics.barrier_at.unwrap_or(0).max(50 * sc.gossip_period);
    let ops = r.history.check_ops(from);
    let ok = check(&ops, RegState::Unknown, &Limits::default()).map(|v| v.is_ok()).unwrap_or(false);
    println!("{} global resets while recovering", r.metrics.resets.len());
    println!("{} operations after {:.0} ms, linearizable: {ok}", ops.len(), from as f64 / MS as f64);
    println!("reset states idle at the end: {:?}", r.metrics.final_reset_idle);
    println!("store sizes at the end: {:?}", r.metrics.final_store_size);
    Ok(())
}
