//! Client node: sequential register operations and the incarnation task.

use std::collections::{BTreeSet, VecDeque};

use bytes::Bytes;

use crate::cas;
use crate::codec::Codec;
use crate::history::{OpKind, OpRecord, Outcome};
use crate::mwabd;
use crate::node::{Input, Micros, Node, NodeEvent, Outbox, TimerKey, MS};
use crate::quorum::PhaseCollector;
use crate::reincarnation::{decide, inc_from_payload, inc_payload, IncDecision};
use crate::transport::{Delivery, Endpoint, EndpointConfig, Reply};
use crate::types::{next_tag, HwAddr, QuorumConfig, QuorumKind, Tag, Uid, Variant};
use crate::value;
use crate::wire::{ChannelClass, MsgType, PhaseId, WireMessage};

/// An operation handed to a client by its driver.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRequest {
    pub kind: OpKind,
    /// Value id to write; ignored for reads.
    pub value: u64,
    pub seq: u64,
    /// Write with this sequence number instead of the next free one.
    pub force_tag_seq: Option<u64>,
}

impl OpRequest {
    pub fn read(seq: u64) -> Self {
        OpRequest { kind: OpKind::Read, value: 0, seq, force_tag_seq: None }
    }

    pub fn write(seq: u64, value: u64) -> Self {
        OpRequest { kind: OpKind::Write, value, seq, force_tag_seq: None }
    }
}

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub quorum: QuorumConfig,
    pub index: usize,
    pub endpoint: EndpointConfig,
    /// Period of the incarnation check after boot.
    pub inc_period: Micros,
    pub object_size: usize,
    /// Distinguishes lives of one client that start from the same incarnation.
    pub nonce: u32,
    pub life: u32,
    /// A phase without a quorum after this long is reissued under a fresh id.
    pub phase_timeout: Micros,
    /// Wait before retrying an operation that ran into an overflowed tag.
    pub retry_backoff: Micros,
}

impl ClientConfig {
    pub fn new(quorum: QuorumConfig, index: usize) -> Self {
        ClientConfig {
            quorum,
            index,
            endpoint: EndpointConfig::default(),
            inc_period: 1_000 * MS,
            object_size: 1024,
            nonce: 0,
            life: 0,
            phase_timeout: 2_000 * MS,
            retry_backoff: 100 * MS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Query,
    PreWrite,
    FinWrite,
    FinFin,
    FinRead,
    /// MW-ABD read write-back.
    Propagate,
    Backoff,
}

#[derive(Debug)]
struct ActiveOp {
    req: OpRequest,
    record: OpRecord,
    stage: Stage,
    round: u8,
    collector: PhaseCollector,
    epoch: u64,
    tag: Tag,
    /// Object or coded elements being written, built once per operation.
    elements: Option<Vec<Bytes>>,
    /// MW-ABD read: the freshest object seen by the query.
    data: Option<Bytes>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum IncStage {
    Query,
    Update(u64),
    Overflow,
}

#[derive(Debug)]
struct IncTask {
    stage: IncStage,
    collector: PhaseCollector,
    round: u8,
    counter: u16,
}

/// A register client. Operations run one at a time; submitting while one
/// is running queues the request.
#[derive(Debug)]
pub struct Client {
    cfg: ClientConfig,
    hw: HwAddr,
    inc: u64,
    booting: bool,
    endpoint: Endpoint,
    codec: Option<Codec>,
    counter: u16,
    active: Option<ActiveOp>,
    queue: VecDeque<(Micros, OpRequest)>,
    task: Option<IncTask>,
    /// Last tag this client wrote, and the epoch it belongs to.
    last_own: Option<(Tag, u64)>,
    /// Frames already charged to the active operation in this step.
    mark: usize,
}

impl Client {
    pub fn new(cfg: ClientConfig) -> Client {
        let hw = HwAddr::client(cfg.index);
        let codec = match cfg.quorum.variant {
            Variant::MwAbd => None,
            _ => Some(Codec::new(cfg.quorum.n(), cfg.quorum.k).expect("validated quorum config")),
        };
        Client {
            endpoint: Endpoint::new(Uid::new(hw, 0), cfg.endpoint.clone()),
            hw,
            inc: 0,
            booting: true,
            codec,
            counter: 0,
            active: None,
            queue: VecDeque::new(),
            task: None,
            last_own: None,
            mark: 0,
            cfg,
        }
    }

    pub fn uid(&self) -> Uid {
        Uid::new(self.hw, self.inc)
    }

    pub fn is_booting(&self) -> bool {
        self.booting
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_none() && self.queue.is_empty()
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    /// Operations invoked but not answered, as they would be recorded if the
    /// client crashed now.
    pub fn pending_ops(&self) -> Vec<OpRecord> {
        let mut v: Vec<OpRecord> = self.active.iter().map(|a| a.record.clone()).collect();
        v.extend(self.queue.iter().map(|(t, r)| self.fresh_record(*t, r)));
        v
    }

    /// Transient fault on this client's channel counters.
    pub fn corrupt_channels(&mut self, rng: &mut impl rand::Rng) {
        let servers = self.servers();
        self.endpoint.corrupt_towards(&servers, &[ChannelClass::Register, ChannelClass::Incarnation], rng);
    }

    fn fresh_record(&self, invoke: Micros, req: &OpRequest) -> OpRecord {
        OpRecord {
            client: self.hw,
            life: self.cfg.life,
            seq: req.seq,
            kind: req.kind,
            value: if req.kind == OpKind::Write { req.value } else { 0 },
            tag: None,
            invoke,
            respond: None,
            outcome: Outcome::Pending,
            rounds: 0,
            bytes: 0,
            aborts: 0,
        }
    }

    fn register_quorum(&self) -> usize {
        self.cfg.quorum.quorum_size(self.cfg.quorum.register_quorum())
    }

    fn next_counter(&mut self) -> u16 {
        self.counter = self.counter.wrapping_add(1);
        self.counter
    }

    fn servers(&self) -> Vec<HwAddr> {
        self.cfg.quorum.server_addrs()
    }

    // accounting

    fn charge_outgoing(&mut self, out: &Outbox) {
        if let Some(a) = self.active.as_mut() {
            let key = a.collector.phase.op_key();
            for f in &out.frames[self.mark.min(out.frames.len())..] {
                if f.msg.op.op_key() == key {
                    a.record.bytes += f.msg.encoded_len() as u64;
                }
            }
        }
        self.mark = out.frames.len();
    }

    // register operations

    fn maybe_start(&mut self, now: Micros, out: &mut Outbox) {
        if self.active.is_some() || self.booting {
            return;
        }
        let Some((invoke, req)) = self.queue.pop_front() else { return };
        let counter = self.next_counter();
        let record = self.fresh_record(invoke, &req);
        let phase = PhaseId { inc: self.inc, nonce: self.cfg.nonce, counter, round: 0 };
        self.active = Some(ActiveOp {
            req,
            record,
            stage: Stage::Query,
            round: 0,
            collector: PhaseCollector::new(phase, 0, now),
            epoch: 0,
            tag: Tag::INITIAL,
            elements: None,
            data: None,
        });
        self.start_phase(now, Stage::Query, out);
    }

    /// Broadcasts the request of `stage` for the active operation under a fresh phase id.
    fn start_phase(&mut self, now: Micros, stage: Stage, out: &mut Outbox) {
        let q = self.register_quorum();
        let me = self.uid();
        let servers = self.servers();
        let Some(a) = self.active.as_mut() else { return };
        a.stage = stage;
        a.round = (a.round + 1) % 128;
        let phase = PhaseId { round: a.round, ..a.collector.phase };
        a.collector = PhaseCollector::new(phase, q, now);
        a.record.rounds += 1;
        let (msg_type, with_element) = match stage {
            Stage::Query => (MsgType::Query, false),
            Stage::PreWrite | Stage::Propagate => (MsgType::PreWrite, true),
            Stage::FinWrite => (MsgType::FinWrite, false),
            Stage::FinFin => (MsgType::FinFin, false),
            Stage::FinRead => (MsgType::FinRead, false),
            Stage::Backoff => unreachable!("backoff sends nothing"),
        };
        let mut msgs = Vec::with_capacity(servers.len());
        for (j, &s) in servers.iter().enumerate() {
            let mut m = WireMessage::new(msg_type, ChannelClass::Register, me).with_op(phase);
            if stage != Stage::Query {
                m = m.with_tag(a.tag).with_epoch(Some(a.epoch));
            }
            if with_element {
                let e = match (stage, &a.elements) {
                    (Stage::Propagate, _) => a.data.clone(),
                    (_, Some(els)) if els.len() == 1 => Some(els[0].clone()),
                    (_, Some(els)) => els.get(j).cloned(),
                    _ => None,
                };
                m = m.with_element(e);
            }
            msgs.push((s, m));
        }
        out.events.push(NodeEvent::RoundStarted { op: phase });
        let timeout = self.phase_timeout(&msgs);
        for (s, m) in msgs {
            self.endpoint.send_reliable(s, m, out);
        }
        out.timer(timeout, TimerKey::PhaseTimeout { op: phase });
    }

    fn phase_timeout(&self, msgs: &[(HwAddr, WireMessage)]) -> Micros {
        let len = msgs.iter().map(|(_, m)| m.encoded_len()).max().unwrap_or(0);
        self.cfg.phase_timeout + (4.0 * len as f64 / self.cfg.endpoint.bytes_per_us) as Micros
    }

    fn on_register_ack(&mut self, now: Micros, ack: WireMessage, out: &mut Outbox) {
        let Some(a) = self.active.as_mut() else { return };
        if ack.op.op_key() == a.collector.phase.op_key() {
            a.record.bytes += ack.encoded_len() as u64;
        }
        let from = ack.sender.hw;
        let op = ack.op;
        if a.stage == Stage::Backoff || !a.collector.offer(from, ack.clone()) {
            return;
        }
        out.events.push(NodeEvent::ResponseAccepted { from, op });
        if a.stage != Stage::Query && ack.epoch.is_some_and(|e| e != a.epoch) {
            // a server replaced its store under us; start over
            a.record.aborts += 1;
            a.req.force_tag_seq = None;
            out.events.push(NodeEvent::Aborted { op });
            self.start_phase(now, Stage::Query, out);
            return;
        }
        if a.collector.is_complete() {
            self.advance(now, out);
        }
    }

    /// The current phase has its quorum.
    fn advance(&mut self, now: Micros, out: &mut Outbox) {
        let variant = self.cfg.quorum.variant;
        let me = self.uid();
        let max_int = self.cfg.quorum.bounds.max_int;
        let object_size = self.cfg.object_size;
        let Some(a) = self.active.as_mut() else { return };
        let responses = a.collector.responses();
        match (a.stage, a.req.kind) {
            (Stage::Query, kind) => {
                let epochs: BTreeSet<u64> = responses.values().filter_map(|m| m.epoch).collect();
                if epochs.len() > 1 {
                    // some responders answered before a reset and some after
                    a.record.aborts += 1;
                    out.events.push(NodeEvent::Aborted { op: a.collector.phase });
                    self.start_phase(now, Stage::Query, out);
                    return;
                }
                a.epoch = epochs.first().copied().unwrap_or(0);
                match (variant, kind) {
                    (Variant::MwAbd, OpKind::Read) => {
                        let (tag, data) = mwabd::freshest(responses);
                        a.tag = tag;
                        a.data = data;
                        self.start_phase(now, Stage::Propagate, out);
                    }
                    (_, OpKind::Read) => {
                        a.tag = cas::reader_target(responses);
                        self.start_phase(now, Stage::FinRead, out);
                    }
                    (_, OpKind::Write) => {
                        let base = match variant {
                            Variant::MwAbd => mwabd::freshest(responses).0,
                            _ => cas::writer_base(variant, responses),
                        };
                        let base = match self.last_own {
                            Some((t, e)) if e == a.epoch => base.max(t),
                            _ => base,
                        };
                        let tag = match a.req.force_tag_seq {
                            Some(seq) => Ok(Tag::new(seq, me)),
                            None => next_tag(&base, me, max_int),
                        };
                        let Ok(tag) = tag else {
                            // the servers are about to block and reset
                            a.stage = Stage::Backoff;
                            let retry = a.collector.phase;
                            out.timer(self.cfg.retry_backoff, TimerKey::PhaseTimeout { op: retry });
                            return;
                        };
                        a.tag = tag;
                        self.last_own = Some((tag, a.epoch));
                        if a.elements.is_none() {
                            let obj = value::object_bytes(a.req.value, object_size);
                            a.elements = Some(match &self.codec {
                                None => vec![Bytes::from(obj)],
                                Some(c) => c
                                    .encode(&obj)
                                    .expect("object is non-empty")
                                    .into_iter()
                                    .map(|e| e.to_bytes())
                                    .collect(),
                            });
                        }
                        self.start_phase(now, Stage::PreWrite, out);
                    }
                }
            }
            (Stage::PreWrite, _) if variant == Variant::MwAbd => self.finish(now, Outcome::Ok, None, out),
            (Stage::PreWrite, _) => self.start_phase(now, Stage::FinWrite, out),
            (Stage::FinWrite, _) if variant == Variant::Casss => self.start_phase(now, Stage::FinFin, out),
            (Stage::FinWrite, _) | (Stage::FinFin, _) => self.finish(now, Outcome::Ok, None, out),
            (Stage::FinRead, _) => {
                let read = if a.tag == Tag::INITIAL {
                    Some(0)
                } else {
                    let codec = self.codec.as_ref().expect("coded variant");
                    cas::reader_decode(codec, responses).ok().and_then(|b| value::object_id(&b))
                };
                match read {
                    Some(v) => self.finish(now, Outcome::Ok, Some(v), out),
                    None => self.finish(now, Outcome::Unsuccessful, None, out),
                }
            }
            (Stage::Propagate, _) => {
                let read = match &a.data {
                    None => Some(0),
                    Some(b) => value::object_id(b),
                };
                match read {
                    Some(v) => self.finish(now, Outcome::Ok, Some(v), out),
                    None => self.finish(now, Outcome::Unsuccessful, None, out),
                }
            }
            (Stage::Backoff, _) => {}
        }
    }

    fn finish(&mut self, now: Micros, outcome: Outcome, read: Option<u64>, out: &mut Outbox) {
        self.charge_outgoing(out);
        let Some(a) = self.active.take() else { return };
        let mut record = a.record;
        record.respond = Some(now);
        record.outcome = outcome;
        record.tag = Some(a.tag);
        if let Some(v) = read {
            record.value = v;
        }
        out.events.push(NodeEvent::OpCompleted(record));
        self.maybe_start(now, out);
    }

    fn on_phase_timeout(&mut self, now: Micros, op: PhaseId, out: &mut Outbox) {
        if let Some(a) = self.active.as_ref() {
            if a.collector.phase == op {
                let stage = if a.stage == Stage::Backoff { Stage::Query } else { a.stage };
                self.start_phase(now, stage, out);
                return;
            }
        }
        if let Some(t) = self.task.as_ref() {
            if t.collector.phase == op {
                let stage = t.stage;
                self.inc_phase(now, stage, out);
            }
        }
    }

    // incarnation task

    fn start_task(&mut self, now: Micros, out: &mut Outbox) {
        if self.task.is_some() {
            return;
        }
        let counter = self.next_counter();
        let phase = PhaseId { inc: self.inc, nonce: self.cfg.nonce, counter, round: 128 };
        self.task = Some(IncTask { stage: IncStage::Query, collector: PhaseCollector::new(phase, 0, now), round: 0, counter });
        self.inc_phase(now, IncStage::Query, out);
    }

    fn inc_phase(&mut self, now: Micros, stage: IncStage, out: &mut Outbox) {
        let q = self.cfg.quorum.quorum_size(QuorumKind::Majority);
        let max_inc = self.cfg.quorum.bounds.max_inc;
        let (me, nonce, inc) = (self.uid(), self.cfg.nonce, self.inc);
        let servers = self.servers();
        let Some(t) = self.task.as_mut() else { return };
        t.stage = stage;
        t.round = (t.round + 1) % 128;
        let phase = PhaseId { inc, nonce, counter: t.counter, round: 128 + t.round };
        t.collector = PhaseCollector::new(phase, q, now);
        let (msg_type, payload) = match stage {
            IncStage::Query => (MsgType::CntrQry, Bytes::new()),
            IncStage::Update(n) => (MsgType::IncCntr, inc_payload(n)),
            IncStage::Overflow => (MsgType::IncCntr, inc_payload(max_inc)),
        };
        for s in servers {
            let m = WireMessage::new(msg_type, ChannelClass::Incarnation, me).with_op(phase).with_payload(payload.clone());
            self.endpoint.send_reliable(s, m, out);
        }
        out.timer(self.cfg.phase_timeout, TimerKey::PhaseTimeout { op: phase });
    }

    fn on_inc_ack(&mut self, now: Micros, ack: WireMessage, out: &mut Outbox) {
        let Some(t) = self.task.as_mut() else { return };
        if !t.collector.offer(ack.sender.hw, ack) || !t.collector.is_complete() {
            return;
        }
        match t.stage {
            IncStage::Query => {
                let m = t.collector.responses().values().filter_map(|r| inc_from_payload(&r.payload)).max().unwrap_or(0);
                match decide(m, self.inc, self.booting, self.cfg.quorum.bounds.max_inc) {
                    IncDecision::Keep => self.end_task(now, out),
                    IncDecision::Adopt(n) => self.inc_phase(now, IncStage::Update(n), out),
                    IncDecision::Overflow => self.inc_phase(now, IncStage::Overflow, out),
                }
            }
            IncStage::Update(n) => {
                self.inc = n;
                self.endpoint.set_uid(self.uid());
                out.events.push(NodeEvent::IncarnationAdopted { inc: n });
                self.end_task(now, out);
            }
            IncStage::Overflow => {
                // the servers now report overflow; ask again after the reset
                self.task = None;
                out.timer(self.cfg.retry_backoff, TimerKey::Incarnation);
            }
        }
    }

    fn end_task(&mut self, now: Micros, out: &mut Outbox) {
        self.task = None;
        if self.booting {
            self.booting = false;
            out.timer(self.cfg.inc_period, TimerKey::Incarnation);
            self.maybe_start(now, out);
        }
    }
}

impl Node for Client {
    fn addr(&self) -> HwAddr {
        self.hw
    }

    fn handle(&mut self, now: Micros, input: Input, out: &mut Outbox) {
        self.mark = out.frames.len();
        match input {
            Input::Start => {
                self.endpoint.kick_all(out);
                self.start_task(now, out);
            }
            Input::Submit(req) => {
                self.queue.push_back((now, req));
                self.maybe_start(now, out);
            }
            Input::Timer(TimerKey::Retransmit { peer, class, gen }) => self.endpoint.on_retransmit(peer, class, gen, out),
            Input::Timer(TimerKey::PhaseTimeout { op }) => self.on_phase_timeout(now, op, out),
            Input::Timer(TimerKey::Incarnation) => {
                if !self.booting {
                    out.timer(self.cfg.inc_period, TimerKey::Incarnation);
                }
                self.start_task(now, out);
            }
            Input::Timer(TimerKey::Gossip) => {}
            Input::Frame(msg) => {
                let me = self.uid();
                let delivery = self.endpoint.on_frame(msg, out, |m| Reply::Ack(m.ack(me)));
                if let Some(Delivery::Response(ack)) = delivery {
                    match ack.class {
                        ChannelClass::Register => self.on_register_ack(now, ack, out),
                        ChannelClass::Incarnation => self.on_inc_ack(now, ack, out),
                        _ => {}
                    }
                }
            }
        }
        self.charge_outgoing(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::server::{Server, ServerConfig};
    use std::collections::VecDeque;

    /// Runs servers and one client over lossless, instantaneous links.
    fn run(variant: Variant, n: usize, f: usize, ops: &[OpRequest]) -> Vec<OpRecord> {
        let q = QuorumConfig::new(n, f, variant);
        let mut servers: Vec<Server> = (0..n).map(|i| Server::new(ServerConfig::new(q.clone(), i))).collect();
        let mut client = Client::new(ClientConfig::new(q, 0));
        let mut done = Vec::new();
        let mut frames = VecDeque::new();
        let mut out = Outbox::new();
        client.handle(0, Input::Start, &mut out);
        for op in ops {
            client.handle(0, Input::Submit(op.clone()), &mut out);
        }
        frames.extend(out.frames.drain(..));
        done.append(&mut out.events);
        while let Some(f) = frames.pop_front() {
            let mut out = Outbox::new();
            match f.to.server_index() {
                Some(i) => servers[i].handle(0, Input::Frame(f.msg), &mut out),
                None => client.handle(0, Input::Frame(f.msg), &mut out),
            }
            frames.extend(out.frames);
            done.extend(out.events);
        }
        done.into_iter()
            .filter_map(|e| match e {
                NodeEvent::OpCompleted(r) => Some(r),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn round_counts_per_variant() {
        for (variant, write_rounds) in [(Variant::MwAbd, 2), (Variant::Cas, 3), (Variant::Casss, 4)] {
            let ops = [OpRequest::write(0, 7), OpRequest::read(1)];
            let recs = run(variant, 5, 1, &ops);
            assert_eq!(recs.len(), 2, "{variant}");
            assert_eq!(recs[0].rounds, write_rounds, "{variant}");
            assert_eq!(recs[1].rounds, 2, "{variant}");
            assert_eq!(recs[1].value, 7, "{variant}");
            assert_eq!(recs[1].outcome, Outcome::Ok);
            assert!(recs[0].bytes > 0);
        }
    }

    #[test]
    fn read_of_fresh_register_returns_initial_value() {
        for variant in Variant::ALL {
            let recs = run(variant, 3, 1, &[OpRequest::read(0)]);
            assert_eq!(recs[0].value, 0);
            assert_eq!(recs[0].outcome, Outcome::Ok);
        }
    }

    #[test]
    fn sequential_writes_get_increasing_tags() {
        let recs = run(Variant::Casss, 5, 1, &[OpRequest::write(0, 1), OpRequest::write(1, 2), OpRequest::read(2)]);
        assert!(recs[1].tag > recs[0].tag);
        assert_eq!(recs[1].tag.unwrap().seq, 2);
        assert_eq!(recs[2].value, 2);
    }

    #[test]
    fn coded_write_moves_fewer_bytes() {
        let mut ops = vec![];
        for i in 0..3 {
            ops.push(OpRequest::write(2 * i, i + 1));
            ops.push(OpRequest::read(2 * i + 1));
        }
        let bytes = |v| run(v, 10, 2, &ops).iter().map(|r| r.bytes).sum::<u64>();
        assert!(bytes(Variant::Casss) < bytes(Variant::MwAbd));
    }
}
