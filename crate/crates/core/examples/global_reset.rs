//! A write with the largest sequence number drives every server through the
//! global reset; the next read still returns that write's value.

use casss::node::MS;
use casss::sim::{run_scenario, ScenarioConfig};
use casss::Variant;

fn main() -> casss::Result<()> {
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 0, 2).with_roles(1, 1);
    sc.ops_per_client = 20;
    sc.inter_op_delay = 300 * MS;
    sc.overflow_write_at = Some(2_000 * MS);
    sc.settle = 2_000 * MS;
    let r = run_scenario(&sc)?;
    let m = &r.metrics;
    for p in &m.proposals {
        println!("server {} proposed seq {} at {:.1} ms", p.0, p.2.seq, p.1 as f64 / MS as f64);
    }
    for x in &m.resets {
        println!("server {} reset to seq {} (epoch {}) at {:.1} ms", x.server, x.tag.seq, x.epoch, x.at as f64 / MS as f64);
    }
    println!(
        "forced value {:?}, first read after reset {:?}, reset took {:.1} ms",
        m.overflow_value,
        m.reset_read_value,
        m.reset_duration().unwrap_or(0) as f64 / MS as f64
    );
    println!("linearizable: {}", r.history.check().map(|v| v.is_ok()).unwrap_or(false));
    Ok(())
}
