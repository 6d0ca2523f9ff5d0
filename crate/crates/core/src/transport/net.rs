//! Network runtime: nodes over UDP datagrams, with a TCP connection per bulk
//! frame.
//!
//! Every node runs its own event loop on a thread, fed by a datagram reader
//! and a stream acceptor. [`Cluster`] wires a set of nodes to a
//! [`Directory`] of socket addresses and drives a scenario's workload.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TransportError;
use crate::client::{Client, OpRequest};
use crate::error::ConfigError;
use crate::history::{History, OpKind, Outcome};
use crate::node::{Input, Micros, Node, NodeEvent, Outbox, TimerKey};
use crate::server::Server;
use crate::sim::{ClientRole, Metrics, ResetRecord, ScenarioConfig};
use crate::types::HwAddr;
use crate::wire::WireMessage;

const MAX_DATAGRAM: usize = 65_507;
const POLL: Duration = Duration::from_millis(50);

/// Socket address of every node: servers first, then clients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Directory {
    pub servers: Vec<SocketAddr>,
    pub clients: Vec<SocketAddr>,
}

impl Directory {
    /// Addresses from the `server` and `client` lines of a config file.
    pub fn parse(servers: &[String], clients: &[String]) -> Result<Directory, ConfigError> {
        let parse = |kind: &str, list: &[String]| {
            list.iter()
                .map(|a| a.parse().map_err(|_| ConfigError::new(format!("bad {kind} address `{a}`"))))
                .collect::<Result<Vec<SocketAddr>, _>>()
        };
        Ok(Directory { servers: parse("server", servers)?, clients: parse("client", clients)? })
    }

    pub fn n(&self) -> usize {
        self.servers.len()
    }

    pub fn node(&self, i: usize) -> SocketAddr {
        if i < self.n() {
            self.servers[i]
        } else {
            self.clients[i - self.n()]
        }
    }

    pub fn resolve(&self, hw: HwAddr) -> Option<SocketAddr> {
        if let Some(i) = hw.server_index() {
            return self.servers.get(i).copied();
        }
        (0..self.clients.len()).find(|&j| HwAddr::client(j) == hw).map(|j| self.clients[j])
    }
}

/// A datagram socket and a stream listener on the same port.
#[derive(Debug)]
pub struct Bound {
    udp: UdpSocket,
    tcp: TcpListener,
}

impl Bound {
    pub fn bind(addr: SocketAddr) -> Result<Bound, TransportError> {
        let err = |source| TransportError::Bind { addr: addr.to_string(), source };
        if addr.port() != 0 {
            return Ok(Bound { udp: UdpSocket::bind(addr).map_err(err)?, tcp: TcpListener::bind(addr).map_err(err)? });
        }
        // an ephemeral datagram port whose stream twin may be taken; try a few
        let mut last = None;
        for _ in 0..16 {
            let udp = UdpSocket::bind(addr).map_err(err)?;
            let port = udp.local_addr()?.port();
            match TcpListener::bind(SocketAddr::new(addr.ip(), port)) {
                Ok(tcp) => return Ok(Bound { udp, tcp }),
                Err(e) => last = Some(e),
            }
        }
        Err(err(last.expect("at least one attempt")))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.udp.local_addr().expect("bound socket")
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NetConfig {
    /// Deadline for connecting and writing one bulk frame.
    pub bulk_timeout: Duration,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { bulk_timeout: Duration::from_secs(5) }
    }
}

/// Sends one frame over its own stream connection, retrying the connect
/// until `deadline` has passed.
pub fn send_bulk(to: SocketAddr, frame: &[u8], deadline: Duration) -> Result<(), TransportError> {
    let start = Instant::now();
    let timeout = || TransportError::BulkTimeout(to.to_string());
    let mut stream = loop {
        let left = deadline.checked_sub(start.elapsed()).ok_or_else(timeout)?;
        match TcpStream::connect_timeout(&to, left.max(Duration::from_millis(1))) {
            Ok(s) => break s,
            Err(_) if start.elapsed() < deadline => thread::sleep(Duration::from_millis(20).min(left)),
            Err(_) => return Err(timeout()),
        }
    };
    let left = deadline.checked_sub(start.elapsed()).ok_or_else(timeout)?;
    stream.set_write_timeout(Some(left.max(Duration::from_millis(1))))?;
    let len = u32::try_from(frame.len()).map_err(|_| TransportError::Io(ErrorKind::InvalidInput.into()))?;
    let res = stream.write_all(&len.to_be_bytes()).and_then(|_| stream.write_all(frame)).and_then(|_| stream.flush());
    match res {
        Ok(()) => Ok(()),
        Err(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => Err(timeout()),
        Err(e) => Err(e.into()),
    }
}

fn read_bulk(mut stream: TcpStream, deadline: Duration) -> std::io::Result<WireMessage> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(deadline))?;
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    WireMessage::decode(Bytes::from(buf)).map_err(|e| std::io::Error::new(ErrorKind::InvalidData, e))
}

pub enum Command {
    Frame(WireMessage),
    Submit(OpRequest),
    Stop,
}

/// An event reported by node `node` at `at` microseconds on the shared clock.
#[derive(Clone, Debug)]
pub struct Stamped {
    pub node: usize,
    pub at: Micros,
    pub event: NodeEvent,
}

/// Traffic a node sent, reported alongside its events.
#[derive(Clone, Debug)]
pub enum Report {
    Event(Stamped),
    Sent { msg_type: crate::wire::MsgType, len: usize },
}

pub struct NodeHandle {
    pub index: usize,
    pub addr: SocketAddr,
    tx: Sender<Command>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl NodeHandle {
    pub fn submit(&self, req: OpRequest) {
        let _ = self.tx.send(Command::Submit(req));
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(Command::Stop);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Starts `node` on `bound`; events and traffic go to `reports`.
pub fn spawn(
    index: usize,
    mut node: Box<dyn Node>,
    bound: Bound,
    dir: Arc<Directory>,
    clock: Instant,
    reports: Sender<Report>,
    cfg: NetConfig,
) -> Result<NodeHandle, TransportError> {
    let addr = bound.local_addr();
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    let udp = bound.udp.try_clone()?;
    udp.set_read_timeout(Some(POLL))?;
    let (utx, ustop) = (tx.clone(), stop.clone());
    threads.push(thread::spawn(move || {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !ustop.load(Ordering::SeqCst) {
            match udp.recv_from(&mut buf) {
                Ok((len, _)) => match WireMessage::decode(Bytes::copy_from_slice(&buf[..len])) {
                    Ok(m) => {
                        let _ = utx.send(Command::Frame(m));
                    }
                    Err(e) => log::debug!("dropping undecodable datagram: {e}"),
                },
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => log::debug!("datagram receive failed: {e}"),
            }
        }
    }));

    let listener = bound.tcp;
    listener.set_nonblocking(true)?;
    let (ttx, tstop) = (tx.clone(), stop.clone());
    threads.push(thread::spawn(move || {
        while !tstop.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let t = ttx.clone();
                    thread::spawn(move || match read_bulk(stream, cfg.bulk_timeout) {
                        Ok(m) => {
                            let _ = t.send(Command::Frame(m));
                        }
                        Err(e) => log::debug!("bulk receive failed: {e}"),
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                Err(e) => log::debug!("accept failed: {e}"),
            }
        }
    }));

    let socket = bound.udp;
    let lstop = stop.clone();
    threads.push(thread::spawn(move || {
        let now = || clock.elapsed().as_micros() as Micros;
        let mut timers: BinaryHeap<Reverse<(Micros, u64, TimerKey)>> = BinaryHeap::new();
        let mut seq = 0u64;
        let mut input = Some(Input::Start);
        loop {
            if let Some(i) = input.take() {
                let mut out = Outbox::new();
                let t = now();
                node.handle(t, i, &mut out);
                for (after, key) in out.timers {
                    seq += 1;
                    timers.push(Reverse((t + after, seq, key)));
                }
                for f in out.frames {
                    let Some(to) = dir.resolve(f.to) else {
                        log::warn!("no address for {}", f.to);
                        continue;
                    };
                    let raw = f.msg.encode();
                    let _ = reports.send(Report::Sent { msg_type: f.msg.msg_type, len: raw.len() });
                    if f.bulk {
                        thread::spawn(move || {
                            if let Err(e) = send_bulk(to, &raw, cfg.bulk_timeout) {
                                log::warn!("{e}");
                            }
                        });
                    } else if let Err(e) = socket.send_to(&raw, to) {
                        log::debug!("datagram to {to} failed: {e}");
                    }
                }
                for event in out.events {
                    let _ = reports.send(Report::Event(Stamped { node: index, at: t, event }));
                }
            }
            if lstop.load(Ordering::SeqCst) {
                break;
            }
            if let Some(Reverse((at, _, _))) = timers.peek() {
                if *at <= now() {
                    let Reverse((_, _, key)) = timers.pop().expect("peeked");
                    input = Some(Input::Timer(key));
                    continue;
                }
            }
            let wait = timers.peek().map_or(POLL, |Reverse((at, _, _))| Duration::from_micros(at.saturating_sub(now())));
            match rx.recv_timeout(wait.min(POLL)) {
                Ok(Command::Frame(m)) => input = Some(Input::Frame(m)),
                Ok(Command::Submit(r)) => input = Some(Input::Submit(r)),
                Ok(Command::Stop) | Err(RecvTimeoutError::Disconnected) => break,
                Err(RecvTimeoutError::Timeout) => {}
            }
        }
    }));

    Ok(NodeHandle { index, addr, tx, stop, threads })
}

/// Outcome of a workload over the network.
#[derive(Debug)]
pub struct NetResult {
    pub history: History,
    pub metrics: Metrics,
    /// Every client finished its operations before the horizon or a stop.
    pub finished: bool,
}

/// The nodes of one process, plus the channel their reports arrive on.
pub struct Cluster {
    cfg: ScenarioConfig,
    dir: Arc<Directory>,
    nodes: BTreeMap<usize, NodeHandle>,
    reports: Receiver<Report>,
    clock: Instant,
}

impl Cluster {
    /// Every server and client of `cfg` in this process, on ephemeral
    /// localhost ports.
    pub fn local(cfg: &ScenarioConfig, net: NetConfig) -> crate::Result<Cluster> {
        cfg.validate()?;
        let n = cfg.quorum.n();
        let any: SocketAddr = "127.0.0.1:0".parse().expect("literal address");
        let bound = (0..n + cfg.clients()).map(|_| Bound::bind(any)).collect::<Result<Vec<_>, _>>()?;
        let addrs: Vec<SocketAddr> = bound.iter().map(Bound::local_addr).collect();
        let dir = Directory { servers: addrs[..n].to_vec(), clients: addrs[n..].to_vec() };
        Self::start(cfg, dir, bound.into_iter().enumerate().collect(), net)
    }

    /// Only node `index` (servers first, then clients), at its configured address.
    pub fn single(cfg: &ScenarioConfig, dir: Directory, index: usize, net: NetConfig) -> crate::Result<Cluster> {
        cfg.validate()?;
        if index >= dir.n() + dir.clients.len() {
            return Err(ConfigError::new(format!("node {index} is not in the configuration")).into());
        }
        let bound = Bound::bind(dir.node(index))?;
        Self::start(cfg, dir, vec![(index, bound)], net)
    }

    fn start(cfg: &ScenarioConfig, dir: Directory, bound: Vec<(usize, Bound)>, net: NetConfig) -> crate::Result<Cluster> {
        let n = cfg.quorum.n();
        let dir = Arc::new(dir);
        let clock = Instant::now();
        let (tx, reports) = mpsc::channel();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut nodes = BTreeMap::new();
        for (i, b) in bound {
            let node: Box<dyn Node> = if i < n {
                Box::new(Server::new(cfg.server_config(i)))
            } else {
                Box::new(Client::new(cfg.client_config(i - n, 0, rng.gen())))
            };
            nodes.insert(i, spawn(i, node, b, dir.clone(), clock, tx.clone(), net)?);
        }
        Ok(Cluster { cfg: cfg.clone(), dir, nodes, reports, clock })
    }

    pub fn directory(&self) -> &Directory {
        &self.dir
    }

    fn now(&self) -> Micros {
        self.clock.elapsed().as_micros() as Micros
    }

    /// Waits until `stop` is raised; for processes that only host servers.
    pub fn serve(self, stop: &AtomicBool) {
        while !stop.load(Ordering::SeqCst) {
            while self.reports.try_recv().is_ok() {}
            thread::sleep(POLL);
        }
        self.shutdown();
    }

    pub fn shutdown(self) {
        for (_, h) in self.nodes {
            h.stop();
        }
    }

    /// Runs the scenario's operations on the clients hosted here, until they
    /// are done, the horizon passes, or `stop` is raised.
    pub fn run(self, stop: &AtomicBool) -> NetResult {
        let cfg = self.cfg.clone();
        let n = cfg.quorum.n();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut metrics = Metrics::new(n);
        let mut history = History::new();
        let local: Vec<usize> = self.nodes.keys().copied().filter(|&i| i >= n).map(|i| i - n).collect();
        let mut submitted = vec![0usize; cfg.clients()];
        let mut busy = vec![false; cfg.clients()];
        let mut next_at: Vec<Option<Micros>> = (0..cfg.clients()).map(|c| local.contains(&c).then_some(0)).collect();
        let mut forced: Option<u32> = None;
        let deadline = cfg.horizon;

        let done = |submitted: &[usize], busy: &[bool], c: usize| submitted[c] >= cfg.ops_per_client && !busy[c];
        loop {
            let now = self.now();
            if stop.load(Ordering::SeqCst) || now > deadline {
                break;
            }
            if local.iter().all(|&c| done(&submitted, &busy, c)) {
                break;
            }
            for &c in &local {
                if busy[c] || submitted[c] >= cfg.ops_per_client || next_at[c].is_none_or(|t| t > now) {
                    continue;
                }
                let seq = submitted[c] as u64;
                let force = c == 0 && forced.is_none() && cfg.overflow_write_at.is_some_and(|t| now >= t);
                let write = force
                    || match cfg.roles[c] {
                        ClientRole::Writer => true,
                        ClientRole::Reader => false,
                        ClientRole::Mixed => rng.gen_bool(0.5),
                    };
                let req = if write {
                    let value = (c * cfg.ops_per_client) as u64 + seq + 1;
                    let mut r = OpRequest::write(seq, value);
                    if force {
                        r.force_tag_seq = Some(cfg.quorum.bounds.max_int);
                        forced = Some(0);
                        metrics.overflow_value = Some(value);
                        submitted[c] = cfg.ops_per_client - 1;
                    }
                    r
                } else {
                    OpRequest::read(seq)
                };
                submitted[c] += 1;
                busy[c] = true;
                next_at[c] = None;
                self.nodes[&(n + c)].submit(req);
            }
            let report = match self.reports.recv_timeout(Duration::from_millis(5)) {
                Ok(r) => r,
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let e = match report {
                Report::Sent { msg_type, len } => {
                    metrics.count(msg_type, len);
                    continue;
                }
                Report::Event(e) => e,
            };
            match e.event {
                NodeEvent::OpCompleted(rec) if e.node >= n => {
                    let c = e.node - n;
                    if forced.is_some() && rec.kind == OpKind::Read && rec.outcome == Outcome::Ok {
                        if let (Some(first), None) = (metrics.resets.first(), metrics.reset_done) {
                            if e.at >= first.at {
                                metrics.reset_done = Some(e.at);
                                metrics.reset_read_value = Some(rec.value);
                            }
                        }
                    }
                    history.push(rec);
                    busy[c] = false;
                    let delay = match cfg.inter_op_delay {
                        0 => 0,
                        d => rng.gen_range(0..=d),
                    };
                    next_at[c] = Some(e.at + delay);
                }
                NodeEvent::RoundStarted { .. } if e.node == n => {
                    if let Some(r) = forced.as_mut() {
                        *r += 1;
                        if *r == 2 && metrics.reset_start.is_none() {
                            metrics.reset_start = Some(e.at);
                        }
                    }
                }
                NodeEvent::IncarnationAdopted { inc } => metrics.incarnations.push((e.node - n, 0, inc)),
                NodeEvent::Aborted { .. } => metrics.aborts += 1,
                NodeEvent::Proposed { tag } => metrics.proposals.push((e.node, e.at, tag)),
                NodeEvent::LocalReset { tag, epoch } => {
                    metrics.resets.push(ResetRecord { server: e.node, at: e.at, tag, epoch })
                }
                NodeEvent::Pruned { size, max_fin_kept } => {
                    metrics.max_records[e.node] = metrics.max_records[e.node].max(size);
                    if size > cfg.quorum.record_bound() || !max_fin_kept {
                        metrics.prune_violations += 1;
                    }
                }
                _ => {}
            }
        }
        let finished = local.iter().all(|&c| done(&submitted, &busy, c));
        metrics.end_time = self.now();
        for (c, &b) in busy.iter().enumerate() {
            if b {
                // the client is still waiting on a response
                metrics.aborts += 0;
                log::warn!("client {c} stopped with an operation in flight");
            }
        }
        self.shutdown();
        NetResult { history, metrics, finished }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Variant;

    #[test]
    fn bulk_roundtrip_and_timeout() {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        let b = Bound::bind(any).unwrap();
        let to = b.local_addr();
        let msg = WireMessage::new(crate::wire::MsgType::PreWrite, crate::wire::ChannelClass::Register, crate::types::Uid::new(HwAddr::client(0), 1))
            .with_element(Some(Bytes::from(vec![7u8; 1 << 20])));
        let raw = msg.encode();
        let t = thread::spawn(move || read_bulk(b.tcp.accept().unwrap().0, Duration::from_secs(5)).unwrap());
        send_bulk(to, &raw, Duration::from_secs(5)).unwrap();
        assert_eq!(t.join().unwrap(), msg);

        // nothing listens on a port we just released
        let gone = Bound::bind(any).unwrap().local_addr();
        let err = send_bulk(gone, &raw, Duration::from_millis(200)).unwrap_err();
        assert!(matches!(err, TransportError::BulkTimeout(_)));
    }

    #[test]
    fn localhost_cluster_runs_a_workload() {
        let mut sc = ScenarioConfig::new(Variant::Casss, 3, 1, 2).with_roles(1, 1);
        sc.ops_per_client = 5;
        sc.object_size = 64 * 1024;
        sc.horizon = 60_000_000;
        let r = Cluster::local(&sc, NetConfig::default()).unwrap().run(&AtomicBool::new(false));
        assert!(r.finished);
        assert_eq!(r.history.ops.len(), 10);
        assert!(r.history.check().unwrap().is_ok());
        assert!(r.metrics.bytes() > 0);
    }
}
