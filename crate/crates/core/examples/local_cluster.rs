//! Servers and clients on localhost UDP/TCP sockets, one thread each.

use std::sync::atomic::AtomicBool;

use casss::sim::ScenarioConfig;
use casss::transport::net::{Cluster, NetConfig};
use casss::Variant;

fn main() -> casss::Result<()> {
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, 3).with_roles(1, 2);
    sc.ops_per_client = 10;
    sc.object_size = 256 * 1024;
    sc.inter_op_delay = 5_000;
    let cluster = Cluster::local(&sc, NetConfig::default())?;
    println!("servers {:?}", cluster.directory().servers);
    let r = cluster.run(&AtomicBool::new(false));
    for o in r.history.ops.iter().take(6) {
        println!("{:?} {} value {} in {} us", o.client, o.kind.name(), o.value, o.latency().unwrap_or(0));
    }
    println!("finished {}, {} bytes sent", r.finished, r.metrics.bytes());
    println!("linearizable: {}", r.history.check().map(|v| v.is_ok()).unwrap_or(false));
    Ok(())
}
