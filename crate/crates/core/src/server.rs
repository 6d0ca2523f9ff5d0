//! Storage server node.

use bytes::Bytes;
use rand::Rng;

use crate::cas;
use crate::gossip::{tag_from_payload, tag_payload, GossipDigest};
use crate::mwabd::AbdState;
use crate::node::{Input, Micros, Node, NodeEvent, Outbox, TimerKey, MS};
use crate::reincarnation::{inc_from_payload, inc_payload, IncarnationQueue};
use crate::reset::{decode_exchange, encode_exchange, ResetState};
use crate::store::{PruneReport, RecordStore};
use crate::transport::{Delivery, Endpoint, EndpointConfig, Reply};
use crate::types::{HwAddr, Phase, QuorumConfig, Record, Tag, Uid, Variant};
use crate::wire::{ChannelClass, MsgType, WireMessage};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub quorum: QuorumConfig,
    pub index: usize,
    pub endpoint: EndpointConfig,
    /// Digest and reset-exchange period (self-stabilizing variant only).
    pub gossip_period: Micros,
    /// Whether overflow leads to a global reset.
    pub enable_reset: bool,
    /// How long an overflowing server waits for pre-written records above
    /// the maximum finalized tag to be finalized before proposing anyway.
    pub drain_timeout: Micros,
}

impl ServerConfig {
    pub fn new(quorum: QuorumConfig, index: usize) -> Self {
        let enable_reset = quorum.variant == Variant::Casss;
        ServerConfig { quorum, index, endpoint: EndpointConfig::default(), gossip_period: 20 * MS, enable_reset, drain_timeout: 1000 * MS }
    }
}

/// Register and service state, separate from the channels so request
/// handlers can run while the endpoint is borrowed.
#[derive(Debug)]
struct Core {
    cfg: ServerConfig,
    me: Uid,
    abd: AbdState,
    store: RecordStore,
    incs: IncarnationQueue,
    reset: ResetState,
    epoch: u64,
    /// Latest digest per peer in the current epoch.
    digests: Vec<Option<GossipDigest>>,
    peer_epoch: Vec<u64>,
    gossip_max_pre: Tag,
    gossip_max_inc: u64,
    /// Finalized tags to pass on to the other servers.
    fin_gossip: Vec<Tag>,
    prunes: Vec<PruneReport>,
    reset_dirty: bool,
    local_resets: Vec<(Tag, u64)>,
    blocked_since: Option<Micros>,
}

impl Core {
    fn variant(&self) -> Variant {
        self.cfg.quorum.variant
    }

    fn bound(&self) -> usize {
        self.cfg.quorum.record_bound()
    }

    fn local_overflow(&self) -> bool {
        let b = &self.cfg.quorum.bounds;
        self.store.records().any(|r| r.tag.overflows(b))
            || self.abd.tag.overflows(b)
            || self.incs.max_inc() >= b.max_inc
    }

    fn blocked(&self) -> bool {
        let b = &self.cfg.quorum.bounds;
        self.local_overflow()
            || self.gossip_max_pre.overflows(b)
            || self.gossip_max_inc >= b.max_inc
            || self.digests.iter().flatten().any(|d| d.overflow_seen)
    }

    fn digest(&self) -> GossipDigest {
        GossipDigest {
            max_pre: self.store.max_tag(),
            max_fin: self.store.max_fin(),
            max_inc_seen: self.incs.max_inc().max(self.gossip_max_inc),
            overflow_seen: self.blocked(),
            epoch: self.epoch,
        }
    }

    fn note_prune(&mut self, r: Option<PruneReport>) {
        if let Some(r) = r {
            self.prunes.push(r);
        }
    }

    fn handle_request(&mut self, msg: &WireMessage) -> Reply {
        let ack = msg.ack(self.me).with_epoch(Some(self.epoch));
        match (msg.class, msg.msg_type) {
            (ChannelClass::Register, t) => self.handle_register(t, msg, ack),
            (ChannelClass::Incarnation, MsgType::CntrQry) => {
                if self.blocked() {
                    return Reply::Hold;
                }
                match self.incs.query(msg.sender.hw, self.cfg.quorum.bounds.max_inc) {
                    Some(v) => Reply::Ack(ack.with_payload(inc_payload(v))),
                    None => Reply::Hold,
                }
            }
            (ChannelClass::Incarnation, MsgType::IncCntr) => {
                if let Some(v) = inc_from_payload(&msg.payload) {
                    self.incs.update(msg.sender.hw, v);
                }
                Reply::Ack(ack)
            }
            (ChannelClass::FinGossip, MsgType::Gossip) => {
                if let Some(t) = tag_from_payload(msg.payload.clone()) {
                    self.store.finalize(t, Phase::Fin);
                }
                Reply::Ack(ack)
            }
            (ChannelClass::Reset, MsgType::ResetState) => {
                let from = msg.sender.hw.server_index();
                let before = self.reset.own();
                let mut echo = None;
                if let (Some(k), Ok((announce, _))) = (from, decode_exchange(msg.payload.clone())) {
                    if k < self.peer_epoch.len() {
                        self.peer_epoch[k] = self.peer_epoch[k].max(msg.epoch.unwrap_or(0));
                    }
                    self.reset.on_peer_state(k, announce);
                    echo = Some(announce);
                    self.reset_step();
                }
                if self.reset.own() != before {
                    self.reset_dirty = true;
                }
                Reply::Ack(ack.with_payload(encode_exchange(self.reset.own(), echo)))
            }
            // malformed combinations are acknowledged and otherwise ignored
            _ => Reply::Ack(ack),
        }
    }

    fn handle_register(&mut self, t: MsgType, msg: &WireMessage, ack: WireMessage) -> Reply {
        if t == MsgType::Query {
            if self.blocked() {
                return Reply::Hold;
            }
            return Reply::Ack(match self.variant() {
                Variant::MwAbd => self.abd.answer_query(ack),
                _ => {
                    let pre = self.store.max_tag().max(self.gossip_max_pre);
                    ack.with_tag(self.store.max_fin()).with_payload(tag_payload(&pre))
                }
            });
        }
        if self.cfg.enable_reset && self.reset.in_progress() {
            // the agreed tag must not fall behind what completes here
            return Reply::Hold;
        }
        if msg.epoch.is_some_and(|e| e != self.epoch) {
            // issued against a store that a reset has since replaced
            return Reply::Ack(ack);
        }
        let Some(tag) = msg.tag else { return Reply::Ack(ack) };
        let (variant, bound) = (self.variant(), self.bound());
        match (variant, t) {
            (Variant::MwAbd, MsgType::PreWrite) => {
                self.abd.on_write(tag, msg.element.clone());
                Reply::Ack(ack)
            }
            (Variant::MwAbd, _) => Reply::Ack(ack),
            (_, MsgType::PreWrite) => {
                let r = cas::on_prewrite(&mut self.store, tag, msg.element.clone().unwrap_or_default(), variant, bound);
                self.note_prune(r);
                Reply::Ack(ack)
            }
            (_, MsgType::FinWrite) => {
                let r = cas::on_finwrite(&mut self.store, tag, variant, bound);
                self.note_prune(r);
                if variant == Variant::Cas {
                    self.fin_gossip.push(tag);
                }
                Reply::Ack(ack)
            }
            (_, MsgType::FinRead) => {
                let (element, r) = cas::on_finread(&mut self.store, tag, variant, bound);
                self.note_prune(r);
                Reply::Ack(ack.with_tag(tag).with_element(element))
            }
            (Variant::Casss, MsgType::FinFin) => {
                let r = cas::on_finfin(&mut self.store, tag, bound);
                self.prunes.push(r);
                Reply::Ack(ack)
            }
            _ => Reply::Ack(ack),
        }
    }

    fn reset_step(&mut self) {
        if let Some(t) = self.reset.step() {
            self.local_reset(t);
        }
        if self.reset.raise(self.store.max_fin()) {
            self.reset_dirty = true;
        }
    }

    fn local_reset(&mut self, tag: Tag) {
        match self.variant() {
            Variant::MwAbd => {
                let data = self.abd.data.clone();
                self.abd = AbdState { tag: Tag::RESET, data };
            }
            _ => self.store.collapse(&tag),
        }
        self.incs.clear();
        self.digests.iter_mut().for_each(|d| *d = None);
        self.gossip_max_pre = Tag::INITIAL;
        self.gossip_max_inc = 0;
        self.epoch += 1;
        self.local_resets.push((tag, self.epoch));
    }

    fn on_digest(&mut self, k: usize, d: GossipDigest) {
        if k >= self.digests.len() || d.epoch < self.peer_epoch[k] {
            return;
        }
        self.peer_epoch[k] = d.epoch;
        if !self.reset.is_idle() {
            // a reset is collapsing the stores; old maxima must not leak back
            return;
        }
        if d.epoch > self.epoch {
            // the peer went through a reset this server missed
            self.epoch = d.epoch;
            self.digests.iter_mut().for_each(|d| *d = None);
        }
        if d.epoch != self.epoch {
            return;
        }
        if d.max_fin > self.store.max_fin() {
            self.store.finalize(d.max_fin, Phase::Fin);
            let r = self.store.prune(self.bound());
            self.prunes.push(r);
        }
        self.gossip_max_pre = self.gossip_max_pre.max(d.max_pre);
        self.gossip_max_inc = self.gossip_max_inc.max(d.max_inc_seen);
        self.digests[k] = Some(d);
    }

    /// Proposes a reset once every server reports overflow and the same
    /// maximum finalized tag.
    fn check_overflow(&mut self, now: Micros) -> Option<Tag> {
        if !self.blocked() {
            self.blocked_since = None;
            return None;
        }
        let since = *self.blocked_since.get_or_insert(now);
        if !self.cfg.enable_reset || !self.reset.enable_reset() {
            return None;
        }
        let mine = self.store.max_fin();
        let me = self.cfg.index;
        // let in-flight writes finalize first, unless their writer is gone
        let drained = now.saturating_sub(since) >= self.cfg.drain_timeout
            || (self.store.max_tag() <= mine
                && self.digests.iter().flatten().all(|d| d.max_pre <= d.max_fin));
        let agreed = drained
            && (0..self.digests.len())
                .filter(|&k| k != me)
                .all(|k| self.digests[k].is_some_and(|d| d.overflow_seen && d.max_fin == mine));
        if agreed && self.reset.propose(mine) {
            self.reset_dirty = true;
            Some(mine)
        } else {
            None
        }
    }
}

/// A storage server: register handlers, gossip, reincarnation service and reset.
#[derive(Debug)]
pub struct Server {
    endpoint: Endpoint,
    core: Core,
    peers: Vec<HwAddr>,
}

impl Server {
    pub fn new(cfg: ServerConfig) -> Server {
        let n = cfg.quorum.n();
        let me = Uid::new(HwAddr::server(cfg.index), 0);
        let peers = (0..n).filter(|&k| k != cfg.index).map(HwAddr::server).collect();
        Server {
            endpoint: Endpoint::new(me, cfg.endpoint.clone()),
            core: Core {
                me,
                abd: AbdState::default(),
                store: RecordStore::new(),
                incs: IncarnationQueue::new(2 * cfg.quorum.clients),
                reset: ResetState::new(cfg.index, n),
                epoch: 0,
                digests: vec![None; n],
                peer_epoch: vec![0; n],
                gossip_max_pre: Tag::INITIAL,
                gossip_max_inc: 0,
                fin_gossip: Vec::new(),
                prunes: Vec::new(),
                reset_dirty: false,
                local_resets: Vec::new(),
                blocked_since: None,
                cfg,
            },
            peers,
        }
    }

    pub fn index(&self) -> usize {
        self.core.cfg.index
    }

    pub fn store(&self) -> &RecordStore {
        &self.core.store
    }

    pub fn abd_state(&self) -> &AbdState {
        &self.core.abd
    }

    pub fn reset_state(&self) -> &ResetState {
        &self.core.reset
    }

    pub fn incarnations(&self) -> &IncarnationQueue {
        &self.core.incs
    }

    pub fn epoch(&self) -> u64 {
        self.core.epoch
    }

    pub fn is_blocked(&self) -> bool {
        self.core.blocked()
    }

    pub fn digest(&self) -> GossipDigest {
        self.core.digest()
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn periodic(&self) -> bool {
        self.core.variant() == Variant::Casss
    }

    /// Emits everything handlers queued up.
    fn flush(&mut self, out: &mut Outbox) {
        let core = &mut self.core;
        for tag in std::mem::take(&mut core.fin_gossip) {
            for &p in &self.peers {
                let m = WireMessage::new(MsgType::Gossip, ChannelClass::FinGossip, core.me).with_payload(tag_payload(&tag));
                self.endpoint.send_reliable(p, m, out);
            }
        }
        for r in std::mem::take(&mut core.prunes) {
            out.events.push(NodeEvent::Pruned { size: r.size, max_fin_kept: r.max_fin_kept });
        }
        let resets = std::mem::take(&mut core.local_resets);
        for &(tag, epoch) in &resets {
            out.events.push(NodeEvent::LocalReset { tag, epoch });
        }
        if core.reset_dirty {
            core.reset_dirty = false;
            self.broadcast_reset(out);
        }
        if !resets.is_empty() && !self.core.blocked() {
            let core = &mut self.core;
            self.endpoint.retry_held(out, |m| core.handle_request(m));
        }
    }

    fn broadcast_reset(&mut self, out: &mut Outbox) {
        let payload = encode_exchange(self.core.reset.own(), None);
        for &p in &self.peers {
            let m = WireMessage::new(MsgType::ResetState, ChannelClass::Reset, self.core.me)
                .with_epoch(Some(self.core.epoch))
                .with_payload(payload.clone());
            self.endpoint.send_reliable(p, m, out);
        }
    }

    fn on_tick(&mut self, now: Micros, out: &mut Outbox) {
        out.timer(self.core.cfg.gossip_period, TimerKey::Gossip);
        for (from, msg) in self.endpoint.take_datagrams() {
            if msg.msg_type != MsgType::Gossip {
                continue;
            }
            if let (Some(k), Ok(d)) = (from.server_index(), GossipDigest::decode(msg.payload.clone())) {
                self.core.on_digest(k, d);
            }
        }
        if let Some(tag) = self.core.check_overflow(now) {
            out.events.push(NodeEvent::Proposed { tag });
        }
        let before = self.core.reset.own();
        self.core.reset_step();
        if self.core.reset.own() != before {
            self.core.reset_dirty = true;
        }
        let digest = self.core.digest().encode();
        for &p in &self.peers {
            let m = WireMessage::new(MsgType::Gossip, ChannelClass::Datagram, self.core.me).with_payload(digest.clone());
            self.endpoint.send_unreliable(p, m, out);
        }
        // refresh the reset exchange wherever the previous one completed
        let payload = encode_exchange(self.core.reset.own(), None);
        for &p in &self.peers {
            if self.endpoint.is_idle(p, ChannelClass::Reset) {
                let m = WireMessage::new(MsgType::ResetState, ChannelClass::Reset, self.core.me)
                    .with_epoch(Some(self.core.epoch))
                    .with_payload(payload.clone());
                self.endpoint.send_reliable(p, m, out);
            }
        }
        if !self.core.blocked() {
            let core = &mut self.core;
            self.endpoint.retry_held(out, |m| core.handle_request(m));
        }
        self.flush(out);
    }

    fn on_response(&mut self, msg: WireMessage) {
        if msg.class != ChannelClass::Reset {
            return;
        }
        let Some(k) = msg.sender.hw.server_index() else { return };
        if k < self.core.peer_epoch.len() {
            self.core.peer_epoch[k] = self.core.peer_epoch[k].max(msg.epoch.unwrap_or(0));
        }
        if let Ok((peer, Some(echoed))) = decode_exchange(msg.payload) {
            let before = self.core.reset.own();
            self.core.reset.on_ack(k, peer, echoed);
            self.core.reset_step();
            if self.core.reset.own() != before {
                self.core.reset_dirty = true;
            }
        }
    }

    // fault injection

    /// Replaces the store with random records. Tags stay below `max_seq`.
    pub fn corrupt_store(&mut self, rng: &mut impl Rng, max_seq: u64, clients: usize) {
        let n = self.core.cfg.quorum.n();
        let k = self.core.cfg.quorum.k;
        self.core.store.clear();
        for _ in 0..rng.gen_range(0..3 * self.core.cfg.quorum.record_bound()) {
            let seq = if rng.gen_bool(0.05) { max_seq - 1 } else { rng.gen_range(0..max_seq) };
            let tag = Tag::new(
                seq,
                Uid::new(HwAddr::client(rng.gen_range(0..clients.max(1))), rng.gen_range(0..4)),
            );
            let phase = [Phase::Pre, Phase::Fin, Phase::FinFin][rng.gen_range(0..3)];
            let element = if phase == Phase::Pre || rng.gen_bool(0.5) {
                let len = rng.gen_range(1..64usize);
                let mut raw = (len as u64 * k as u64).to_be_bytes().to_vec();
                raw.extend((0..len).map(|_| rng.gen::<u8>()));
                Some(Bytes::from(raw))
            } else {
                None
            };
            self.core.store.put_raw(Record { tag, element, phase });
        }
        if self.core.variant() == Variant::MwAbd {
            let len = rng.gen_range(8..64usize);
            self.core.abd = AbdState {
                tag: Tag::new(rng.gen_range(0..max_seq), Uid::new(HwAddr::client(rng.gen_range(0..clients.max(1))), 1)),
                data: Some(Bytes::from((0..len).map(|_| rng.gen::<u8>()).collect::<Vec<u8>>())),
            };
        }
        self.core.gossip_max_pre = Tag::new(rng.gen_range(0..max_seq), Uid::SYSTEM);
        let _ = n;
    }

    pub fn corrupt_channels(&mut self, rng: &mut impl Rng, clients: &[HwAddr]) {
        let mut peers = self.peers.clone();
        peers.extend_from_slice(clients);
        self.endpoint.corrupt_towards(
            &peers,
            &[ChannelClass::Register, ChannelClass::Incarnation, ChannelClass::FinGossip, ChannelClass::Reset],
            rng,
        );
    }

    pub fn corrupt_reset_state(&mut self, rng: &mut impl Rng) {
        self.core.reset.corrupt(rng);
    }

    /// Random queue contents with incarnation numbers below `max_value`.
    pub fn corrupt_incarnations(&mut self, rng: &mut impl Rng, clients: &[HwAddr], max_value: u64) {
        let len = rng.gen_range(0..=self.core.incs.capacity() + 2);
        let entries = (0..len)
            .map(|_| {
                let hw = if clients.is_empty() || rng.gen_bool(0.3) {
                    HwAddr(rng.gen())
                } else {
                    clients[rng.gen_range(0..clients.len())]
                };
                (hw, if rng.gen_bool(0.05) { max_value - 1 } else { rng.gen_range(0..max_value) })
            })
            .collect();
        self.core.incs.put_raw(entries);
        self.core.gossip_max_inc = rng.gen_range(0..max_value);
    }

    /// Stores a record verbatim, as a transient fault would.
    pub fn inject_record(&mut self, r: Record) {
        self.core.store.put_raw(r);
    }
}

impl Node for Server {
    fn addr(&self) -> HwAddr {
        HwAddr::server(self.core.cfg.index)
    }

    fn handle(&mut self, now: Micros, input: Input, out: &mut Outbox) {
        match input {
            Input::Start => {
                if self.periodic() {
                    out.timer(self.core.cfg.gossip_period, TimerKey::Gossip);
                }
                self.endpoint.kick_all(out);
            }
            Input::Timer(TimerKey::Gossip) => self.on_tick(now, out),
            Input::Timer(TimerKey::Retransmit { peer, class, gen }) => self.endpoint.on_retransmit(peer, class, gen, out),
            Input::Timer(_) | Input::Submit(_) => {}
            Input::Frame(msg) => {
                let core = &mut self.core;
                if let Some(Delivery::Response(ack)) = self.endpoint.on_frame(msg, out, |m| core.handle_request(m)) {
                    self.on_response(ack);
                }
                self.flush(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Bounds;
    use crate::wire::PhaseId;

    fn server(variant: Variant) -> Server {
        let mut q = QuorumConfig::new(3, 1, variant);
        q.bounds = Bounds { max_int: 100, max_inc: 50 };
        Server::new(ServerConfig::new(q, 0))
    }

    fn client() -> Uid {
        Uid::new(HwAddr::client(0), 1)
    }

    fn request(t: MsgType, round: u8) -> WireMessage {
        let class = match t {
            MsgType::CntrQry | MsgType::IncCntr => ChannelClass::Incarnation,
            _ => ChannelClass::Register,
        };
        WireMessage::new(t, class, client()).with_op(PhaseId { inc: 1, nonce: 1, counter: 0, round })
    }

    /// Delivers a fresh request through a client-side endpoint and returns the ack, if any.
    fn call(s: &mut Server, ep: &mut Endpoint, msg: WireMessage) -> Option<WireMessage> {
        let mut out = Outbox::new();
        ep.send_reliable(HwAddr::server(0), msg, &mut out);
        let mut replies = Outbox::new();
        for f in out.frames {
            s.handle(0, Input::Frame(f.msg), &mut replies);
        }
        let mut got = None;
        let me = ep.uid().hw;
        for f in replies.frames.into_iter().filter(|f| f.to == me) {
            if let Some(Delivery::Response(r)) = ep.on_frame(f.msg, &mut Outbox::new(), |_| unreachable!()) {
                got = Some(r);
            }
        }
        got
    }

    fn t(seq: u64) -> Tag {
        Tag::new(seq, client())
    }

    #[test]
    fn coded_write_path() {
        let mut s = server(Variant::Casss);
        let mut ep = Endpoint::new(client(), EndpointConfig::default());
        let q = call(&mut s, &mut ep, request(MsgType::Query, 0)).unwrap();
        assert_eq!(q.tag, Some(Tag::INITIAL));
        assert_eq!(q.epoch, Some(0));
        let pre = request(MsgType::PreWrite, 1).with_tag(t(1)).with_element(Some(Bytes::from_static(b"elem")));
        call(&mut s, &mut ep, pre.clone()).unwrap();
        call(&mut s, &mut ep, pre.with_op(PhaseId { round: 9, ..Default::default() })).unwrap();
        assert_eq!(s.store().len(), 1);
        call(&mut s, &mut ep, request(MsgType::FinWrite, 2).with_tag(t(1))).unwrap();
        call(&mut s, &mut ep, request(MsgType::FinFin, 3).with_tag(t(1))).unwrap();
        assert_eq!(s.store().get(&t(1)).unwrap().phase, Phase::FinFin);
        let r = call(&mut s, &mut ep, request(MsgType::FinRead, 4).with_tag(t(1))).unwrap();
        assert_eq!(r.element.as_deref(), Some(&b"elem"[..]));
    }

    #[test]
    fn overflow_blocks_queries_only() {
        let mut s = server(Variant::Casss);
        let mut ep = Endpoint::new(client(), EndpointConfig::default());
        assert!(!s.is_blocked());
        let pre = request(MsgType::PreWrite, 1).with_tag(t(100)).with_element(Some(Bytes::from_static(b"x")));
        call(&mut s, &mut ep, pre).unwrap();
        assert!(s.is_blocked());
        assert!(s.digest().overflow_seen);
        assert!(call(&mut s, &mut ep, request(MsgType::Query, 2)).is_none());
        let mut ep2 = Endpoint::new(Uid::new(HwAddr::client(1), 1), EndpointConfig::default());
        assert!(call(&mut s, &mut ep2, request(MsgType::FinWrite, 3).with_tag(t(100))).is_some());
    }

    #[test]
    fn incarnation_service() {
        let mut s = server(Variant::Cas);
        let mut ep = Endpoint::new(client(), EndpointConfig::default());
        let r = call(&mut s, &mut ep, request(MsgType::CntrQry, 0)).unwrap();
        assert_eq!(inc_from_payload(&r.payload), Some(0));
        call(&mut s, &mut ep, request(MsgType::IncCntr, 1).with_payload(inc_payload(4))).unwrap();
        let r = call(&mut s, &mut ep, request(MsgType::CntrQry, 2)).unwrap();
        assert_eq!(inc_from_payload(&r.payload), Some(4));
        call(&mut s, &mut ep, request(MsgType::IncCntr, 3).with_payload(inc_payload(50))).unwrap();
        assert!(s.is_blocked());
        assert!(call(&mut s, &mut ep, request(MsgType::CntrQry, 4)).is_none());
    }

    #[test]
    fn cas_finalize_gossips_once_to_every_peer() {
        let mut s = server(Variant::Cas);
        let mut ep = Endpoint::new(client(), EndpointConfig::default());
        let mut out = Outbox::new();
        ep.send_reliable(HwAddr::server(0), request(MsgType::FinWrite, 1).with_tag(t(1)), &mut out);
        let frame = out.frames.remove(0).msg;
        let mut replies = Outbox::new();
        s.handle(0, Input::Frame(frame.clone()), &mut replies);
        s.handle(0, Input::Frame(frame), &mut replies);
        let gossip = replies.frames.iter().filter(|f| f.msg.class == ChannelClass::FinGossip).count();
        assert_eq!(gossip, 2);
    }

    #[test]
    fn stale_epoch_requests_are_not_applied() {
        let mut s = server(Variant::Casss);
        let mut ep = Endpoint::new(client(), EndpointConfig::default());
        let pre = request(MsgType::PreWrite, 1)
            .with_tag(t(3))
            .with_element(Some(Bytes::from_static(b"x")))
            .with_epoch(Some(7));
        let ack = call(&mut s, &mut ep, pre).unwrap();
        assert_eq!(ack.epoch, Some(0));
        assert!(s.store().is_empty());
    }

    #[test]
    fn gossip_digest_adoption() {
        let mut s = server(Variant::Casss);
        let mut d = GossipDigest { max_fin: t(5), max_pre: t(9), ..Default::default() };
        s.core.on_digest(1, d);
        assert_eq!(s.store().max_fin(), t(5));
        assert_eq!(s.store().get(&t(5)).unwrap().element, None);
        d.max_fin = t(2);
        s.core.on_digest(1, d);
        assert_eq!(s.store().max_fin(), t(5));
        d.overflow_seen = true;
        s.core.on_digest(2, d);
        assert!(s.is_blocked());
    }
}
