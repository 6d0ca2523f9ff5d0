//! Deterministic discrete-event simulator.
//!
//! Every node runs inside one event queue ordered by virtual time and
//! insertion sequence; all randomness comes from one seeded ChaCha stream.
//! Links lose, duplicate and reorder datagrams; frames marked bulk travel
//! as a lossless FIFO stream.

mod metrics;
mod scenario;

pub use metrics::{Metrics, ResetRecord};
pub use scenario::{ClientRole, FaultKind, FaultSpec, Latency, LinkModel, NodeRef, ScenarioConfig};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Triangular};

use crate::client::{Client, OpRequest};
use crate::error::Result;
use crate::history::{History, OpKind, Outcome};
use crate::node::{Input, Micros, Node, NodeEvent, Outbox, TimerKey};
use crate::server::Server;
use crate::types::{HwAddr, Phase, Record, Tag, Uid};
use crate::wire::{MsgType, PhaseId, WireMessage};

/// Output of one scenario run.
#[derive(Debug)]
pub struct SimResult {
    pub history: History,
    pub metrics: Metrics,
    /// Final server states.
    pub servers: Vec<Server>,
    /// False when the horizon cut the run short.
    pub finished: bool,
}

impl SimResult {
    /// Hex SHA-256 over the history and metrics CSVs.
    pub fn hash(&self) -> String {
        metrics::digest(&self.history, &self.metrics)
    }
}

#[derive(Debug)]
enum Ev {
    Start(usize),
    Deliver { to: usize, msg: WireMessage, replay: bool },
    Timer { node: usize, life: u32, key: TimerKey },
    NextOp { client: usize, life: u32 },
    Fault(FaultSpec),
}

#[derive(Debug)]
struct Scheduled {
    at: Micros,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug)]
enum SimNode {
    Server(Server),
    Client(Client),
}

#[derive(Debug, Default)]
struct LinkState {
    next_free: Micros,
    last_arrival: Micros,
}

#[derive(Debug, Default)]
struct Workload {
    /// Operations finished or lost to a crash.
    done: usize,
    submitted: usize,
    at_barrier: bool,
    /// Acknowledgments received in the current life.
    log: Vec<WireMessage>,
    /// Acknowledgments received in the previous life.
    previous: Vec<WireMessage>,
    issued: BTreeSet<PhaseId>,
}

const REPLAY_LOG: usize = 64;

struct Sim {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    now: Micros,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    nodes: Vec<SimNode>,
    up: Vec<bool>,
    life: Vec<u32>,
    addr: BTreeMap<HwAddr, usize>,
    links: BTreeMap<(usize, usize), LinkState>,
    work: Vec<Workload>,
    next_value: u64,
    history: History,
    metrics: Metrics,
    barrier_open: bool,
    /// Reset experiment: rounds seen of the forced write so far.
    forced: Option<u32>,
    end_at: Option<Micros>,
    latency: Option<Triangular<f64>>,
}

impl Sim {
    fn new(cfg: ScenarioConfig) -> Sim {
        let n = cfg.quorum.n();
        let c = cfg.clients();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut nodes = Vec::with_capacity(n + c);
        for i in 0..n {
            nodes.push(SimNode::Server(Server::new(cfg.server_config(i))));
        }
        for j in 0..c {
            nodes.push(SimNode::Client(Client::new(cfg.client_config(j, 0, rng.gen()))));
        }
        let mut addr = BTreeMap::new();
        for i in 0..n {
            addr.insert(HwAddr::server(i), i);
        }
        for j in 0..c {
            addr.insert(HwAddr::client(j), n + j);
        }
        let l = cfg.link.latency;
        let latency = (l.max > l.min).then(|| Triangular::new(l.min as f64, l.max as f64, l.mode as f64).expect("validated latency"));
        let metrics = Metrics::new(n);
        Sim {
            rng,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            up: vec![true; n + c],
            life: vec![0; n + c],
            nodes,
            addr,
            links: BTreeMap::new(),
            work: (0..c).map(|_| Workload::default()).collect(),
            next_value: 1,
            history: History::new(),
            metrics,
            barrier_open: cfg.warmup_ops == 0,
            forced: None,
            end_at: None,
            latency,
            cfg,
        }
    }

    fn n(&self) -> usize {
        self.cfg.quorum.n()
    }

    fn schedule(&mut self, at: Micros, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, ev });
    }

    fn sample_latency(&mut self) -> Micros {
        match &self.latency {
            Some(d) => d.sample(&mut self.rng).round() as Micros,
            None => self.cfg.link.latency.min,
        }
    }

    fn run(mut self) -> SimResult {
        for i in 0..self.nodes.len() {
            self.schedule(0, Ev::Start(i));
        }
        for f in self.cfg.faults.clone() {
            self.schedule(f.at, Ev::Fault(f));
        }
        for c in 0..self.cfg.clients() {
            let d = self.op_delay();
            self.schedule(d, Ev::NextOp { client: c, life: 0 });
        }
        let mut finished = false;
        while let Some(s) = self.queue.pop() {
            if s.at > self.cfg.horizon {
                break;
            }
            if let Some(end) = self.end_at {
                if s.at > end {
                    finished = true;
                    break;
                }
            }
            self.now = s.at;
            self.dispatch(s.ev);
            if self.end_at.is_none() && self.work.iter().all(|w| w.done >= self.cfg.ops_per_client) {
                self.end_at = Some(self.now + self.cfg.settle);
            }
        }
        if self.end_at.is_some() && self.queue.is_empty() {
            finished = true;
        }
        self.finish(finished)
    }

    fn finish(mut self, finished: bool) -> SimResult {
        // whatever is still running counts as pending
        for (node, up) in self.nodes.iter().zip(&self.up) {
            if let (SimNode::Client(c), true) = (node, up) {
                for op in c.pending_ops() {
                    self.history.push(op);
                }
            }
        }
        self.metrics.end_time = self.now;
        let mut servers = Vec::new();
        for (i, node) in self.nodes.into_iter().enumerate() {
            if let SimNode::Server(s) = node {
                self.metrics.final_reset_idle[i] = s.reset_state().enable_reset();
                self.metrics.final_store_size[i] = s.store().len();
                servers.push(s);
            }
        }
        SimResult { history: self.history, metrics: self.metrics, servers, finished }
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Start(i) => self.step(i, Input::Start, false),
            Ev::Deliver { to, msg, replay } => {
                if !self.up[to] {
                    self.metrics.dropped += 1;
                    return;
                }
                if to >= self.n() && msg.msg_type == MsgType::Ack {
                    let n = self.n();
                    let w = &mut self.work[to - n];
                    if !replay {
                        w.log.push(msg.clone());
                        if w.log.len() > REPLAY_LOG {
                            w.log.remove(0);
                        }
                    }
                }
                self.step(to, Input::Frame(msg), replay);
            }
            Ev::Timer { node, life, key } => {
                if self.up[node] && self.life[node] == life {
                    self.step(node, Input::Timer(key), false);
                }
            }
            Ev::NextOp { client, life } => {
                let node = self.n() + client;
                if self.up[node] && self.life[node] == life {
                    self.submit_next(client);
                }
            }
            Ev::Fault(f) => self.fault(f),
        }
    }

    fn op_delay(&mut self) -> Micros {
        match self.cfg.inter_op_delay {
            0 => 0,
            d => self.rng.gen_range(0..=d),
        }
    }

    fn submit_next(&mut self, c: usize) {
        let w = &self.work[c];
        if w.submitted >= self.cfg.ops_per_client {
            return;
        }
        let seq = w.submitted as u64;
        self.work[c].submitted += 1;
        let forced = c == 0
            && self.forced.is_none()
            && self.cfg.overflow_write_at.is_some_and(|t| self.now >= t);
        let kind = match self.cfg.roles[c] {
            _ if forced => OpKind::Write,
            ClientRole::Writer => OpKind::Write,
            ClientRole::Reader => OpKind::Read,
            ClientRole::Mixed => {
                if self.rng.gen_bool(0.5) {
                    OpKind::Write
                } else {
                    OpKind::Read
                }
            }
        };
        let req = match kind {
            OpKind::Read => OpRequest::read(seq),
            OpKind::Write => {
                let v = self.next_value;
                self.next_value += 1;
                let mut r = OpRequest::write(seq, v);
                if forced {
                    r.force_tag_seq = Some(self.cfg.quorum.bounds.max_int);
                    self.forced = Some(0);
                    self.metrics.overflow_value = Some(v);
                    // nothing is written after it, so the value to preserve stays put
                    let skipped = self.cfg.ops_per_client - self.work[c].submitted;
                    self.work[c].submitted += skipped;
                    self.work[c].done += skipped;
                }
                r
            }
        };
        self.step(self.n() + c, Input::Submit(req), false);
    }

    /// Runs one input through node `i` and carries out its outbox.
    fn step(&mut self, i: usize, input: Input, replay: bool) {
        let mut out = Outbox::new();
        match &mut self.nodes[i] {
            SimNode::Server(s) => s.handle(self.now, input, &mut out),
            SimNode::Client(c) => c.handle(self.now, input, &mut out),
        }
        let life = self.life[i];
        for (after, key) in out.timers {
            self.schedule(self.now + after, Ev::Timer { node: i, life, key });
        }
        for f in out.frames {
            self.send(i, f.to, f.msg, f.bulk);
        }
        for e in out.events {
            self.on_event(i, e, replay);
        }
    }

    fn send(&mut self, from: usize, to: HwAddr, msg: WireMessage, bulk: bool) {
        let Some(&to) = self.addr.get(&to) else { return };
        let len = msg.encoded_len();
        self.metrics.count(msg.msg_type, len);
        let link = self.cfg.link;
        if !bulk && self.rng.gen_bool(link.loss) {
            self.metrics.lost += 1;
            return;
        }
        let tx = (len as f64 / link.bytes_per_us).ceil() as Micros;
        let latency = self.sample_latency();
        let reordered = !bulk && link.reorder > 0.0 && self.rng.gen_bool(link.reorder);
        let extra = if reordered { self.rng.gen_range(0..=link.latency.max) } else { 0 };
        let now = self.now;
        let state = self.links.entry((from, to)).or_default();
        let start = state.next_free.max(now);
        state.next_free = start + tx;
        let mut arrival = start + tx + latency + extra;
        if !reordered {
            arrival = arrival.max(state.last_arrival);
            state.last_arrival = arrival;
        }
        let dup = !bulk && link.dup > 0.0 && self.rng.gen_bool(link.dup);
        if dup {
            self.metrics.duplicated += 1;
            let again = arrival + self.sample_latency();
            self.schedule(again, Ev::Deliver { to, msg: msg.clone(), replay: false });
        }
        self.schedule(arrival, Ev::Deliver { to, msg, replay: false });
    }

    fn on_event(&mut self, i: usize, e: NodeEvent, replay: bool) {
        let n = self.n();
        match e {
            NodeEvent::OpCompleted(rec) => {
                let c = i - n;
                if self.forced.is_some() && rec.kind == OpKind::Read && rec.outcome == Outcome::Ok {
                    if let (Some(first), None) = (self.metrics.resets.first(), self.metrics.reset_done) {
                        if self.now >= first.at {
                            self.metrics.reset_done = Some(self.now);
                            self.metrics.reset_read_value = Some(rec.value);
                        }
                    }
                }
                self.history.push(rec);
                self.work[c].done += 1;
                self.after_op(c);
            }
            NodeEvent::RoundStarted { op } => {
                let c = i - n;
                self.work[c].issued.insert(op);
                if c == 0 {
                    if let Some(r) = self.forced.as_mut() {
                        *r += 1;
                        if *r == 2 && self.metrics.reset_start.is_none() {
                            self.metrics.reset_start = Some(self.now);
                        }
                    }
                }
            }
            NodeEvent::ResponseAccepted { op, .. } => {
                if replay || !self.work[i - n].issued.contains(&op) {
                    self.metrics.stale_accepts += 1;
                }
            }
            NodeEvent::IncarnationAdopted { inc } => {
                let c = i - n;
                self.metrics.incarnations.push((c, self.life[i], inc));
            }
            NodeEvent::Aborted { .. } => self.metrics.aborts += 1,
            NodeEvent::Proposed { tag } => self.metrics.proposals.push((i, self.now, tag)),
            NodeEvent::LocalReset { tag, epoch } => {
                self.metrics.resets.push(ResetRecord { server: i, at: self.now, tag, epoch });
            }
            NodeEvent::Pruned { size, max_fin_kept } => {
                let m = &mut self.metrics;
                m.max_records[i] = m.max_records[i].max(size);
                if size > self.cfg.quorum.record_bound() || !max_fin_kept {
                    m.prune_violations += 1;
                }
            }
        }
    }

    fn after_op(&mut self, c: usize) {
        let warm = self.cfg.warmup_ops;
        if !self.barrier_open && self.work[c].done >= warm {
            self.work[c].at_barrier = true;
            if self.work.iter().all(|w| w.at_barrier) {
                self.barrier_open = true;
                self.metrics.barrier_at = Some(self.now);
                for k in 0..self.cfg.clients() {
                    let life = self.life[self.n() + k];
                    let d = self.op_delay();
                    self.schedule(self.now + d, Ev::NextOp { client: k, life });
                }
            }
            return;
        }
        let life = self.life[self.n() + c];
        let d = self.op_delay();
        self.schedule(self.now + d, Ev::NextOp { client: c, life });
    }

    fn fault(&mut self, f: FaultSpec) {
        self.metrics.faults += 1;
        let n = self.n();
        let clients: Vec<HwAddr> = (0..self.cfg.clients()).map(HwAddr::client).collect();
        let bounds = self.cfg.quorum.bounds;
        let max_seq = bounds.max_int.clamp(1, 1000) + 1;
        let max_inc = bounds.max_inc.clamp(1, 100) + 1;
        match (f.kind, f.target) {
            (FaultKind::Crash, NodeRef::Server(i)) => {
                self.up[i] = false;
                self.life[i] += 1;
            }
            (FaultKind::Restart, NodeRef::Server(i)) => {
                if !self.up[i] {
                    self.up[i] = true;
                    self.step(i, Input::Start, false);
                }
            }
            (FaultKind::Crash, NodeRef::Client(c)) => {
                let i = n + c;
                if !self.up[i] {
                    return;
                }
                if let SimNode::Client(cl) = &self.nodes[i] {
                    let lost = cl.pending_ops();
                    self.work[c].done += lost.len();
                    for op in lost {
                        self.history.push(op);
                    }
                }
                self.up[i] = false;
                self.life[i] += 1;
                let now = self.now;
                let restarts = self.cfg.faults.iter().any(|g| {
                    g.kind == FaultKind::Restart && g.target == NodeRef::Client(c) && g.at >= now
                });
                let ops = self.cfg.ops_per_client;
                let w = &mut self.work[c];
                w.previous = std::mem::take(&mut w.log);
                w.issued.clear();
                if !restarts {
                    w.done = ops;
                }
            }
            (FaultKind::Restart, NodeRef::Client(c)) => {
                let i = n + c;
                if self.up[i] {
                    return;
                }
                let nonce = self.rng.gen();
                self.nodes[i] = SimNode::Client(Client::new(self.cfg.client_config(c, self.life[i], nonce)));
                self.up[i] = true;
                self.step(i, Input::Start, false);
                let d = self.op_delay();
                let life = self.life[i];
                self.schedule(self.now + d, Ev::NextOp { client: c, life });
            }
            (FaultKind::ReplayToClient, NodeRef::Client(c)) => {
                let msgs = self.work[c].previous.clone();
                self.metrics.replayed += msgs.len() as u64;
                for msg in msgs {
                    let at = self.now + self.sample_latency();
                    self.schedule(at, Ev::Deliver { to: n + c, msg, replay: true });
                }
            }
            (FaultKind::CorruptChannel, NodeRef::Client(c)) => {
                if let SimNode::Client(cl) = &mut self.nodes[n + c] {
                    cl.corrupt_channels(&mut self.rng);
                }
            }
            (kind, NodeRef::Server(i)) => {
                let SimNode::Server(s) = &mut self.nodes[i] else { unreachable!() };
                let rng = &mut self.rng;
                match kind {
                    FaultKind::CorruptStore => s.corrupt_store(rng, max_seq, clients.len()),
                    FaultKind::CorruptChannel => s.corrupt_channels(rng, &clients),
                    FaultKind::CorruptResetState => s.corrupt_reset_state(rng),
                    FaultKind::CorruptIncarnation => s.corrupt_incarnations(rng, &clients, max_inc),
                    FaultKind::InjectOverflowTag => s.inject_record(Record {
                        tag: Tag::new(bounds.max_int, Uid::new(HwAddr::client(0), 1)),
                        element: None,
                        phase: Phase::Fin,
                    }),
                    _ => {}
                }
            }
            // store and reset faults have no client counterpart
            (_, NodeRef::Client(_)) => {}
        }
    }
}

/// Runs one scenario to completion (or to its horizon).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimResult> {
    cfg.validate()?;
    Ok(Sim::new(cfg.clone()).run())
}
