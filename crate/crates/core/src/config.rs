//! Line-oriented configuration files.
//!
//! One `key value` pair per line; `#` starts a comment. `server <addr>` and
//! `client <addr>` repeat, one line per node, in index order. Keys under
//! `scenario.` describe simulator runs and benchmark sweeps.
//!
//! ```text
//! variant casss
//! f 1
//! server 127.0.0.1:7000
//! server 127.0.0.1:7001
//! server 127.0.0.1:7002
//! scenario.writers 2
//! scenario.loss 0.1
//! scenario.fault 500 crash server 2
//! ```

use std::path::Path;
use std::str::FromStr;

use crate::error::ConfigError;
use crate::node::{Micros, MS};
use crate::sim::{ClientRole, FaultKind, FaultSpec, Latency, NodeRef, ScenarioConfig};
use crate::types::{QuorumConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    /// Client addresses for the network backend.
    pub client_addrs: Vec<String>,
    pub scenario: ScenarioConfig,
    /// Benchmark repetitions per sweep point; the runner picks a default
    /// per back-end when absent.
    pub repetitions: Option<usize>,
}

impl ConfigFile {
    pub fn quorum(&self) -> &QuorumConfig {
        &self.scenario.quorum
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ConfigFile, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(parse(&text)?)
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: Option<&str>) -> Result<T, ConfigError> {
    let v = v.ok_or_else(|| ConfigError::at(line, format!("`{key}` needs a value")))?;
    v.parse().map_err(|_| ConfigError::at(line, format!("bad value `{v}` for `{key}`")))
}

fn ms(line: usize, key: &str, v: Option<&str>) -> Result<Micros, ConfigError> {
    let x: f64 = value(line, key, v)?;
    if !(x >= 0.0 && x.is_finite()) {
        return Err(ConfigError::at(line, format!("`{key}` must be a non-negative duration")));
    }
    Ok((x * MS as f64).round() as Micros)
}

pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut servers = Vec::new();
    let mut client_addrs = Vec::new();
    let mut f = 0usize;
    let mut k = None;
    let mut variant = Variant::Casss;
    let mut delta = QuorumConfig::DEFAULT_DELTA;
    let mut bounds = crate::types::Bounds::default();
    let mut clients_key = None;
    let mut roles: Option<(usize, usize, usize)> = None;
    let mut sc = ScenarioConfig::new(Variant::Casss, 1, 0, 1);
    let mut repetitions = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let body = body.replacen('=', " ", 1);
        let mut words = body.split_whitespace();
        let key = words.next().expect("non-empty line");
        let first = words.next();
        let rest: Vec<&str> = words.collect();
        let mut extra_ok = false;
        match key {
            "server" => servers.push(value::<String>(line, key, first)?),
            "client" => client_addrs.push(value::<String>(line, key, first)?),
            "f" => f = value(line, key, first)?,
            "k" => k = Some(value(line, key, first)?),
            "variant" => {
                let v = first.ok_or_else(|| ConfigError::at(line, "`variant` needs a value"))?;
                variant = v.parse().map_err(|e: String| ConfigError::at(line, e))?;
            }
            "delta" => delta = value(line, key, first)?,
            "maxint" => bounds.max_int = value(line, key, first)?,
            "maxinc" => bounds.max_inc = value(line, key, first)?,
            "clients" => clients_key = Some(value(line, key, first)?),
            "scenario.seed" => sc.seed = value(line, key, first)?,
            "scenario.object_size" => sc.object_size = value(line, key, first)?,
            "scenario.loss" => sc.link.loss = value(line, key, first)?,
            "scenario.dup" => sc.link.dup = value(line, key, first)?,
            "scenario.reorder" => sc.link.reorder = value(line, key, first)?,
            "scenario.bandwidth_mbps" => {
                let mbps: f64 = value(line, key, first)?;
                sc.link.bytes_per_us = mbps / 8.0;
            }
            "scenario.latency_ms" => {
                let min = ms(line, key, first)?;
                let (mode, max) = match rest.as_slice() {
                    [] => (min, min),
                    [mode, max] => (ms(line, key, Some(mode))?, ms(line, key, Some(max))?),
                    _ => return Err(ConfigError::at(line, "`scenario.latency_ms` takes 1 or 3 values (min mode max)")),
                };
                sc.link.latency = Latency { min, mode, max };
                extra_ok = true;
            }
            "scenario.ops" => sc.ops_per_client = value(line, key, first)?,
            "scenario.writers" | "scenario.readers" | "scenario.mixed" => {
                let n: usize = value(line, key, first)?;
                let r = roles.get_or_insert((0, 0, 0));
                match key {
                    "scenario.writers" => r.0 = n,
                    "scenario.readers" => r.1 = n,
                    _ => r.2 = n,
                }
            }
            "scenario.delay_ms" => sc.inter_op_delay = ms(line, key, first)?,
            "scenario.warmup_ops" => sc.warmup_ops = value(line, key, first)?,
            "scenario.gossip_ms" => sc.gossip_period = ms(line, key, first)?,
            "scenario.inc_period_ms" => sc.inc_period = ms(line, key, first)?,
            "scenario.rto_ms" => sc.rto = ms(line, key, first)?,
            "scenario.phase_timeout_ms" => sc.phase_timeout = ms(line, key, first)?,
            "scenario.settle_ms" => sc.settle = ms(line, key, first)?,
            "scenario.horizon_ms" => sc.horizon = ms(line, key, first)?,
            "scenario.overflow_write_ms" => sc.overflow_write_at = Some(ms(line, key, first)?),
            "scenario.repetitions" => {
                let r: usize = value(line, key, first)?;
                if r < 3 {
                    return Err(ConfigError::at(line, "`scenario.repetitions` must be at least 3"));
                }
                repetitions = Some(r);
            }
            "scenario.fault" => {
                let at = ms(line, key, first)?;
                let [kind, role, index] = rest.as_slice() else {
                    return Err(ConfigError::at(line, "`scenario.fault` takes <ms> <kind> <server|client> <index>"));
                };
                let kind = FaultKind::parse(kind).ok_or_else(|| ConfigError::at(line, format!("unknown fault `{kind}`")))?;
                let index: usize = value(line, key, Some(index))?;
                let target = match *role {
                    "server" => NodeRef::Server(index),
                    "client" => NodeRef::Client(index),
                    other => return Err(ConfigError::at(line, format!("fault target `{other}` is neither server nor client"))),
                };
                sc.faults.push(FaultSpec { at, kind, target });
                extra_ok = true;
            }
            other => return Err(ConfigError::at(line, format!("unknown key `{other}`"))),
        }
        if !extra_ok && !rest.is_empty() {
            return Err(ConfigError::at(line, format!("unexpected trailing value `{}`", rest.join(" "))));
        }
    }

    if servers.is_empty() {
        return Err(ConfigError::new("no `server` lines"));
    }
    let n = servers.len();
    let mut quorum = QuorumConfig::new(n, f, variant);
    quorum.servers = servers;
    quorum.k = k.unwrap_or(quorum.k);
    quorum.delta = delta;
    quorum.bounds = bounds;
    sc.roles = match roles {
        Some((w, r, m)) => [vec![ClientRole::Writer; w], vec![ClientRole::Reader; r], vec![ClientRole::Mixed; m]].concat(),
        None => vec![ClientRole::Mixed; clients_key.unwrap_or(client_addrs.len().max(1))],
    };
    quorum.clients = clients_key.unwrap_or(sc.roles.len());
    sc.quorum = quorum;
    sc.validate()?;
    if !client_addrs.is_empty() && client_addrs.len() != sc.roles.len() {
        return Err(ConfigError::new(format!(
            "{} client lines but {} scenario clients",
            client_addrs.len(),
            sc.roles.len()
        )));
    }
    Ok(ConfigFile { client_addrs, scenario: sc, repetitions })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# three coded servers
variant cas
f 1
server 127.0.0.1:7000
server 127.0.0.1:7001   # trailing comment
server 127.0.0.1:7002
maxint 1000
scenario.writers 1
scenario.readers 2
scenario.latency_ms 1 2 3
scenario.fault 250 crash server 1
";

    #[test]
    fn parses_sample() {
        let c = parse(SAMPLE).unwrap();
        let q = c.quorum();
        assert_eq!(q.n(), 3);
        assert_eq!(q.k, 1);
        assert_eq!(q.variant, Variant::Cas);
        assert_eq!(q.bounds.max_int, 1000);
        assert_eq!(q.clients, 3);
        assert_eq!(c.scenario.link.latency, Latency { min: MS, mode: 2 * MS, max: 3 * MS });
        assert_eq!(c.scenario.faults, vec![FaultSpec { at: 250 * MS, kind: FaultKind::Crash, target: NodeRef::Server(1) }]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("server a\nf x\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.to_string().starts_with("config line 2:"));
        assert_eq!(parse("server a\nbogus 1\n").unwrap_err().line, Some(2));
        assert_eq!(parse("server a\nscenario.fault 1 melt server 0\n").unwrap_err().line, Some(2));
        assert_eq!(parse("server a\nf 1 2\n").unwrap_err().line, Some(2));
    }

    #[test]
    fn semantic_checks() {
        assert!(parse("f 1\n").is_err());
        let too_big_k = "server a\nserver b\nserver c\nf 1\nk 2\n";
        assert!(parse(too_big_k).unwrap_err().message.contains("k=2"));
        assert!(parse("server a\nscenario.loss 1.0\n").is_err());
    }
}
