//! Scenario description for simulator runs.

use crate::client::ClientConfig;
use crate::error::ConfigError;
use crate::node::{Micros, MS};
use crate::server::ServerConfig;
use crate::transport::EndpointConfig;
use crate::types::{QuorumConfig, Variant};

/// Triangular latency distribution, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Latency {
    pub min: Micros,
    pub mode: Micros,
    pub max: Micros,
}

impl Latency {
    pub fn fixed(us: Micros) -> Self {
        Latency { min: us, mode: us, max: us }
    }

    pub fn mean(&self) -> f64 {
        (self.min + self.mode + self.max) as f64 / 3.0
    }
}

impl Default for Latency {
    fn default() -> Self {
        Latency { min: 5 * MS, mode: 25 * MS, max: 60 * MS }
    }
}

/// Fault model applied to every directed link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub loss: f64,
    pub dup: f64,
    /// Probability that a datagram is held back past later ones.
    pub reorder: f64,
    pub latency: Latency,
    /// Link throughput in bytes per microsecond; frames on one link serialize.
    pub bytes_per_us: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { loss: 0.0, dup: 0.0, reorder: 0.0, latency: Latency::default(), bytes_per_us: 125.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Server(usize),
    Client(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultKind {
    /// Servers pause (state kept, in-flight messages to them lost); clients
    /// lose everything.
    Crash,
    Restart,
    CorruptStore,
    CorruptChannel,
    CorruptResetState,
    CorruptIncarnation,
    /// Plants a finalized record whose tag sits at the sequence bound.
    InjectOverflowTag,
    /// Redelivers responses the client received in its previous life.
    ReplayToClient,
}

impl FaultKind {
    pub fn parse(s: &str) -> Option<FaultKind> {
        Some(match s {
            "crash" => FaultKind::Crash,
            "restart" => FaultKind::Restart,
            "corruptStore" | "corrupt_store" => FaultKind::CorruptStore,
            "corruptChannel" | "corrupt_channel" => FaultKind::CorruptChannel,
            "corruptResetState" | "corrupt_reset_state" => FaultKind::CorruptResetState,
            "corruptIncarnation" | "corrupt_incarnation" => FaultKind::CorruptIncarnation,
            "injectOverflowTag" | "inject_overflow_tag" => FaultKind::InjectOverflowTag,
            "replayToClient" | "replay_to_client" => FaultKind::ReplayToClient,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultSpec {
    pub at: Micros,
    pub kind: FaultKind,
    pub target: NodeRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientRole {
    Writer,
    Reader,
    /// Writes with probability one half.
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Server set and protocol parameters; `quorum.clients` is kept equal to `roles.len()`.
    pub quorum: QuorumConfig,
    pub roles: Vec<ClientRole>,
    pub object_size: usize,
    pub link: LinkModel,
    pub ops_per_client: usize,
    /// Upper end of the uniform pause between a client's operations.
    pub inter_op_delay: Micros,
    pub faults: Vec<FaultSpec>,
    /// Operations per client before the barrier at which every client
    /// waits for all others; 0 disables the barrier.
    pub warmup_ops: usize,
    pub gossip_period: Micros,
    pub inc_period: Micros,
    pub rto: Micros,
    pub phase_timeout: Micros,
    /// Extra time simulated after the last operation completes.
    pub settle: Micros,
    /// Hard stop for the virtual clock.
    pub horizon: Micros,
    /// From this time on, client 0 issues one write with the largest sequence
    /// number and then stops (reset experiment).
    pub overflow_write_at: Option<Micros>,
}

impl ScenarioConfig {
    pub fn new(variant: Variant, servers: usize, f: usize, clients: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed: 0,
            quorum: QuorumConfig::new(servers, f, variant).with_clients(clients),
            roles: vec![ClientRole::Mixed; clients],
            object_size: 1024,
            link: LinkModel::default(),
            ops_per_client: 10,
            inter_op_delay: 100 * MS,
            faults: Vec::new(),
            warmup_ops: 0,
            gossip_period: 20 * MS,
            inc_period: 1_000 * MS,
            rto: 200 * MS,
            phase_timeout: 2_000 * MS,
            settle: 0,
            horizon: 3_600_000 * MS,
            overflow_write_at: None,
        }
    }

    pub fn with_roles(mut self, writers: usize, readers: usize) -> Self {
        self.roles = [vec![ClientRole::Writer; writers], vec![ClientRole::Reader; readers]].concat();
        self.quorum.clients = self.roles.len();
        self
    }

    pub fn clients(&self) -> usize {
        self.roles.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.quorum.validate()?;
        let l = &self.link;
        if !(0.0..1.0).contains(&l.loss) {
            return Err(ConfigError::new(format!("loss probability {} must lie in [0, 1)", l.loss)));
        }
        if !(0.0..=1.0).contains(&l.dup) || !(0.0..=1.0).contains(&l.reorder) {
            return Err(ConfigError::new("dup and reorder probabilities must lie in [0, 1]"));
        }
        if !(l.latency.min <= l.latency.mode && l.latency.mode <= l.latency.max) {
            return Err(ConfigError::new("latency must satisfy min <= mode <= max"));
        }
        if l.bytes_per_us <= 0.0 {
            return Err(ConfigError::new("bandwidth must be positive"));
        }
        if self.roles.is_empty() {
            return Err(ConfigError::new("scenario needs at least one client"));
        }
        if self.quorum.clients != self.roles.len() {
            return Err(ConfigError::new("clients key disagrees with the scenario client roles"));
        }
        let crashed: std::collections::BTreeSet<usize> = self
            .faults
            .iter()
            .filter_map(|f| match (f.kind, f.target) {
                (FaultKind::Crash, NodeRef::Server(i)) => Some(i),
                _ => None,
            })
            .collect();
        if crashed.len() > self.quorum.f {
            return Err(ConfigError::new(format!("{} servers crash but f = {}", crashed.len(), self.quorum.f)));
        }
        for fault in &self.faults {
            match fault.target {
                NodeRef::Server(i) if i >= self.quorum.n() => {
                    return Err(ConfigError::new(format!("fault targets unknown server {i}")))
                }
                NodeRef::Client(i) if i >= self.clients() => {
                    return Err(ConfigError::new(format!("fault targets unknown client {i}")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl ScenarioConfig {
    pub fn server_config(&self, index: usize) -> ServerConfig {
        let mut sc = ServerConfig::new(self.quorum.clone(), index);
        sc.endpoint = EndpointConfig { rto: self.rto, ..EndpointConfig::default() };
        sc.gossip_period = self.gossip_period;
        sc
    }

    pub fn client_config(&self, index: usize, life: u32, nonce: u32) -> ClientConfig {
        let mut c = ClientConfig::new(self.quorum.clone(), index);
        c.endpoint = EndpointConfig { rto: self.rto, ..EndpointConfig::default() };
        c.inc_period = self.inc_period;
        c.object_size = self.object_size;
        c.phase_timeout = self.phase_timeout;
        c.nonce = nonce;
        c.life = life;
        c
    }
}
