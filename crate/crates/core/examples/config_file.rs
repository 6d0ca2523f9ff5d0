//! Parsing a configuration file and turning it into a scenario.

use casss::config;

const TEXT: &str = "\
variant casss
f 1
server 10.0.0.1:7000
server 10.0.0.2:7000
server 10.0.0.3:7000
server 10.0.0.4:7000
server 10.0.0.5:7000
maxint 4096
scenario.writers 2
scenario.readers 3
scenario.loss 0.05
scenario.latency_ms 5 25 60
scenario.fault 1500 crash server 4
";

fn main() {
    let cfg = config::parse(TEXT).expect("valid config");
    let q = cfg.quorum();
    println!("{:?}: N={} f={} k={} delta={} record bound {}", q.variant, q.n(), q.f, q.k, q.delta, q.record_bound());
    println!("{} clients, faults {:?}", cfg.scenario.clients(), cfg.scenario.faults);
    match config::parse("server a\nf 2\n") {
        Err(e) => println!("{e}"),
        Ok(_) => unreachable!(),
    }
}
