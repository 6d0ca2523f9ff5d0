//! Message delivery: self-stabilizing reliable channels, overwrite-buffered
//! datagrams and a bulk path for large frames.

pub mod channel;
pub mod net;

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use crate::node::{Micros, Outbox, Outgoing, TimerKey, MS};
use crate::types::{HwAddr, Uid};
use crate::wire::{ChannelClass, MsgType, PhaseId, WireMessage};
use channel::{AckOutcome, ReceiverState, SenderState, Verdict};

pub use channel::DEFAULT_CAP;

/// Frames larger than this travel over the bulk path.
pub const BULK_THRESHOLD: usize = 8 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("bulk transfer to {0} timed out")]
    BulkTimeout(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("unknown peer {0:?}")]
    UnknownPeer(HwAddr),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct EndpointConfig {
    pub cap: u64,
    /// Retransmission timeout for a small frame.
    pub rto: Micros,
    /// Link throughput estimate used to stretch the timeout for large frames.
    pub bytes_per_us: f64,
    pub bulk_threshold: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig { cap: DEFAULT_CAP, rto: 200 * MS, bytes_per_us: 12.5, bulk_threshold: BULK_THRESHOLD }
    }
}

impl EndpointConfig {
    fn rto_for(&self, len: usize) -> Micros {
        self.rto + (2.0 * len as f64 / self.bytes_per_us) as Micros
    }
}

/// How many not-yet-transmitted messages a channel keeps.
fn queue_limit(class: ChannelClass) -> usize {
    match class {
        ChannelClass::FinGossip => 16,
        _ => 1,
    }
}

#[derive(Debug)]
struct Outlet {
    state: SenderState,
    pending: Option<WireMessage>,
    queue: VecDeque<WireMessage>,
    gen: u64,
}

#[derive(Debug)]
struct Inlet {
    state: ReceiverState,
    last_ack: Option<WireMessage>,
    held: Option<WireMessage>,
}

/// Application decision on a freshly delivered message.
#[derive(Debug)]
pub enum Reply {
    /// Deliver and answer with this acknowledgment.
    Ack(WireMessage),
    /// Do not deliver yet; the channel keeps the message pending.
    Hold,
}

/// Results of [`Endpoint::on_frame`] the application must act on.
#[derive(Debug)]
pub enum Delivery {
    /// The acknowledgment for our pending message returned.
    Response(WireMessage),
    /// A datagram was stored in its overwrite slot.
    Datagram { from: HwAddr, msg_type: MsgType },
}

/// One node's channel endpoints.
#[derive(Debug)]
pub struct Endpoint {
    me: Uid,
    cfg: EndpointConfig,
    outlets: BTreeMap<(HwAddr, ChannelClass), Outlet>,
    inlets: BTreeMap<(HwAddr, ChannelClass), Inlet>,
    slots: BTreeMap<(HwAddr, MsgType), WireMessage>,
    delivered: u64,
    stamp: u64,
}

impl Endpoint {
    pub fn new(me: Uid, cfg: EndpointConfig) -> Endpoint {
        Endpoint {
            me,
            cfg,
            outlets: BTreeMap::new(),
            inlets: BTreeMap::new(),
            slots: BTreeMap::new(),
            delivered: 0,
            stamp: 0,
        }
    }

    pub fn uid(&self) -> Uid {
        self.me
    }

    pub fn set_uid(&mut self, uid: Uid) {
        self.me = uid;
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Messages handed to the application by reliable receivers so far.
    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }

    fn emit(&self, to: HwAddr, msg: WireMessage, out: &mut Outbox) {
        let bulk = msg.encoded_len() > self.cfg.bulk_threshold;
        out.frames.push(Outgoing { to, msg, bulk });
    }

    /// Queues `msg` on the reliable channel to `to`; its class picks the channel.
    pub fn send_reliable(&mut self, to: HwAddr, mut msg: WireMessage, out: &mut Outbox) {
        let class = msg.class;
        debug_assert_ne!(class, ChannelClass::Datagram);
        msg.sender = self.me;
        if msg.op == PhaseId::default() {
            // acknowledgments are matched on the identifier, so every
            // message needs a distinct one
            self.stamp += 1;
            msg.op = PhaseId { inc: self.me.inc, nonce: (self.stamp >> 16) as u32, counter: self.stamp as u16, round: u8::MAX };
        }
        let cap = self.cfg.cap;
        let outlet = self.outlets.entry((to, class)).or_insert_with(|| Outlet {
            state: SenderState::new(cap),
            pending: None,
            queue: VecDeque::new(),
            gen: 0,
        });
        outlet.queue.push_back(msg);
        while outlet.queue.len() > queue_limit(class) {
            outlet.queue.pop_front();
        }
        if outlet.pending.is_none() {
            self.start_next(to, class, out);
        }
    }

    /// True when nothing is pending or queued towards `to` on `class`.
    pub fn is_idle(&self, to: HwAddr, class: ChannelClass) -> bool {
        self.outlets
            .get(&(to, class))
            .is_none_or(|o| o.pending.is_none() && o.queue.is_empty())
    }

    fn start_next(&mut self, to: HwAddr, class: ChannelClass, out: &mut Outbox) {
        let Some(outlet) = self.outlets.get_mut(&(to, class)) else { return };
        if let Some(mut next) = outlet.queue.pop_front() {
            next.token = outlet.state.token();
            outlet.pending = Some(next);
            self.transmit(to, class, out);
        }
    }

    fn transmit(&mut self, to: HwAddr, class: ChannelClass, out: &mut Outbox) {
        let outlet = self.outlets.get_mut(&(to, class)).expect("outlet exists");
        let Some(pending) = outlet.pending.as_mut() else { return };
        pending.token = outlet.state.token();
        pending.sender = self.me;
        outlet.gen += 1;
        let msg = pending.clone();
        let rto = self.cfg.rto_for(msg.encoded_len());
        out.timer(rto, TimerKey::Retransmit { peer: to, class, gen: outlet.gen });
        self.emit(to, msg, out);
    }

    pub fn on_retransmit(&mut self, peer: HwAddr, class: ChannelClass, gen: u64, out: &mut Outbox) {
        if let Some(outlet) = self.outlets.get(&(peer, class)) {
            if outlet.gen == gen && outlet.pending.is_some() {
                self.transmit(peer, class, out);
            }
        }
    }

    /// Retransmits every pending message now (after a pause).
    pub fn kick_all(&mut self, out: &mut Outbox) {
        let keys: Vec<_> = self.outlets.iter().filter(|(_, o)| o.pending.is_some()).map(|(k, _)| *k).collect();
        for (peer, class) in keys {
            self.transmit(peer, class, out);
        }
    }

    /// Fire-and-forget.
    pub fn send_unreliable(&mut self, to: HwAddr, mut msg: WireMessage, out: &mut Outbox) {
        msg.class = ChannelClass::Datagram;
        msg.sender = self.me;
        msg.token = 0;
        self.emit(to, msg, out);
    }

    /// Latest datagram of each `(source, type)` received since the last call.
    pub fn take_datagrams(&mut self) -> Vec<(HwAddr, WireMessage)> {
        std::mem::take(&mut self.slots).into_iter().map(|((from, _), m)| (from, m)).collect()
    }

    /// Processes one incoming frame. `handler` is invoked for every message a
    /// reliable receiver delivers and decides the acknowledgment.
    pub fn on_frame(
        &mut self,
        msg: WireMessage,
        out: &mut Outbox,
        handler: impl FnOnce(&WireMessage) -> Reply,
    ) -> Option<Delivery> {
        let from = msg.sender.hw;
        if msg.class == ChannelClass::Datagram {
            let msg_type = msg.msg_type;
            self.slots.insert((from, msg_type), msg);
            return Some(Delivery::Datagram { from, msg_type });
        }
        if msg.msg_type == MsgType::Ack {
            let key = (from, msg.class);
            let outlet = self.outlets.get_mut(&key)?;
            let pending_op = outlet.pending.as_ref()?.op;
            return match outlet.state.on_ack(msg.token) {
                // The token matches but the receiver answered some other
                // message (a stale cached ack, or a bare one). The counter has
                // moved past that token; the retransmission will carry the new one.
                AckOutcome::Arrived if msg.op != pending_op => None,
                AckOutcome::Arrived => {
                    outlet.pending = None;
                    outlet.gen += 1;
                    self.start_next(from, msg.class, out);
                    Some(Delivery::Response(msg))
                }
                AckOutcome::Ignored | AckOutcome::Resynced => None,
            };
        }
        self.offer(msg, out, handler);
        None
    }

    fn offer(&mut self, msg: WireMessage, out: &mut Outbox, handler: impl FnOnce(&WireMessage) -> Reply) {
        let from = msg.sender.hw;
        let class = msg.class;
        let cap = self.cfg.cap;
        let me = self.me;
        let inlet = self.inlets.entry((from, class)).or_insert_with(|| Inlet {
            state: ReceiverState::new(cap),
            last_ack: None,
            held: None,
        });
        let ack = match inlet.state.classify(msg.token) {
            Verdict::Fresh => match handler(&msg) {
                Reply::Ack(mut ack) => {
                    inlet.state.accept(msg.token);
                    inlet.held = None;
                    ack.class = class;
                    ack.msg_type = MsgType::Ack;
                    ack.token = inlet.state.token();
                    ack.sender = me;
                    inlet.last_ack = Some(ack.clone());
                    self.delivered += 1;
                    ack
                }
                Reply::Hold => {
                    inlet.held = Some(msg);
                    return;
                }
            },
            Verdict::Duplicate => match &inlet.last_ack {
                Some(a) if a.token == inlet.state.token() => a.clone(),
                _ => {
                    let mut bare = WireMessage::new(MsgType::Ack, class, me);
                    bare.token = inlet.state.token();
                    bare
                }
            },
        };
        self.emit(from, ack, out);
    }

    /// Re-offers messages previously answered with [`Reply::Hold`].
    pub fn retry_held(&mut self, out: &mut Outbox, mut handler: impl FnMut(&WireMessage) -> Reply) {
        let held: Vec<WireMessage> = self.inlets.values_mut().filter_map(|i| i.held.take()).collect();
        for msg in held {
            self.offer(msg, out, &mut handler);
        }
    }

    /// Drops every queued and pending outgoing message on `class`.
    pub fn cancel_class(&mut self, class: ChannelClass) {
        for ((_, c), o) in self.outlets.iter_mut() {
            if *c == class {
                o.queue.clear();
            }
        }
    }

    /// Transient fault: every channel counter takes an arbitrary value in `[0, cap]`
    /// and cached acknowledgments are lost.
    pub fn corrupt(&mut self, rng: &mut impl Rng) {
        let cap = self.cfg.cap;
        for o in self.outlets.values_mut() {
            o.state.counter = rng.gen_range(0..=cap);
        }
        for i in self.inlets.values_mut() {
            i.state.counter = rng.gen_range(0..=cap);
            i.last_ack = None;
        }
    }

    /// Corrupts the counters of channels that do not exist yet as well, by
    /// creating them towards `peers`.
    pub fn corrupt_towards(&mut self, peers: &[HwAddr], classes: &[ChannelClass], rng: &mut impl Rng) {
        let cap = self.cfg.cap;
        for &p in peers {
            for &c in classes {
                self.outlets.entry((p, c)).or_insert_with(|| Outlet {
                    state: SenderState::new(cap),
                    pending: None,
                    queue: VecDeque::new(),
                    gen: 0,
                });
                self.inlets.entry((p, c)).or_insert_with(|| Inlet {
                    state: ReceiverState::new(cap),
                    last_ack: None,
                    held: None,
                });
            }
        }
        self.corrupt(rng);
    }

    /// Counter values, for inspection in tests.
    pub fn counters(&self) -> Vec<((HwAddr, ChannelClass), u64, Option<u64>)> {
        let mut v: Vec<_> = self
            .outlets
            .iter()
            .map(|(k, o)| (*k, o.state.counter, self.inlets.get(k).map(|i| i.state.counter)))
            .collect();
        v.sort_by_key(|(k, _, _)| *k);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Outbox;

    fn uid(i: usize) -> Uid {
        Uid::new(HwAddr::client(i), 1)
    }

    fn query(from: Uid) -> WireMessage {
        WireMessage::new(MsgType::Query, ChannelClass::Register, from)
    }

    /// Moves every frame in `out` addressed to `dst` into the destination endpoint.
    fn pump(src: &mut Endpoint, dst: &mut Endpoint, out: Outbox, seen: &mut Vec<WireMessage>) -> Vec<WireMessage> {
        let mut responses = Vec::new();
        let mut back = Outbox::new();
        for f in out.frames {
            if let Some(Delivery::Response(r)) = dst.on_frame(f.msg, &mut back, |m| {
                seen.push(m.clone());
                Reply::Ack(m.ack(Uid::SYSTEM))
            }) {
                responses.push(r);
            }
        }
        for f in back.frames {
            let mut ignored = Outbox::new();
            if let Some(Delivery::Response(r)) = src.on_frame(f.msg, &mut ignored, |_| unreachable!()) {
                responses.push(r);
            }
        }
        responses
    }

    #[test]
    fn lossless_send_takes_one_round_trip() {
        let mut a = Endpoint::new(uid(0), EndpointConfig::default());
        let mut b = Endpoint::new(uid(1), EndpointConfig::default());
        let mut out = Outbox::new();
        a.send_reliable(HwAddr::client(1), query(uid(0)), &mut out);
        assert_eq!(out.frames.len(), 1);
        let mut seen = Vec::new();
        let responses = pump(&mut a, &mut b, out, &mut seen);
        assert_eq!(responses.len(), 1);
        assert_eq!(seen.len(), 1);
        assert!(a.is_idle(HwAddr::client(1), ChannelClass::Register));
        assert_eq!(a.counters()[0].1, 1);
    }

    #[test]
    fn retransmitted_copy_is_acked_but_not_redelivered() {
        let mut a = Endpoint::new(uid(0), EndpointConfig::default());
        let mut b = Endpoint::new(uid(1), EndpointConfig::default());
        let mut out = Outbox::new();
        a.send_reliable(HwAddr::client(1), query(uid(0)), &mut out);
        let frame = out.frames[0].msg.clone();
        let mut seen = Vec::new();
        let mut back = Outbox::new();
        b.on_frame(frame.clone(), &mut back, |m| {
            seen.push(m.clone());
            Reply::Ack(m.ack(Uid::SYSTEM))
        });
        b.on_frame(frame, &mut back, |m| {
            seen.push(m.clone());
            Reply::Ack(m.ack(Uid::SYSTEM))
        });
        assert_eq!(seen.len(), 1);
        assert_eq!(back.frames.len(), 2);
        assert_eq!(back.frames[0].msg, back.frames[1].msg);
    }

    #[test]
    fn held_messages_stay_pending_until_released() {
        let mut a = Endpoint::new(uid(0), EndpointConfig::default());
        let mut b = Endpoint::new(uid(1), EndpointConfig::default());
        let mut out = Outbox::new();
        a.send_reliable(HwAddr::client(1), query(uid(0)), &mut out);
        let mut back = Outbox::new();
        b.on_frame(out.frames[0].msg.clone(), &mut back, |_| Reply::Hold);
        assert!(back.frames.is_empty());
        b.retry_held(&mut back, |m| Reply::Ack(m.ack(Uid::SYSTEM)));
        assert_eq!(back.frames.len(), 1);
        let mut ignored = Outbox::new();
        assert!(matches!(
            a.on_frame(back.frames.remove(0).msg, &mut ignored, |_| unreachable!()),
            Some(Delivery::Response(_))
        ));
    }

    #[test]
    fn register_queue_keeps_only_latest_waiting_message() {
        let mut a = Endpoint::new(uid(0), EndpointConfig::default());
        let mut out = Outbox::new();
        let peer = HwAddr::client(1);
        for round in 0..3u8 {
            let mut m = query(uid(0));
            m.op.round = round;
            a.send_reliable(peer, m, &mut out);
        }
        // first one is in flight, the second was superseded by the third
        assert_eq!(out.frames.len(), 1);
        assert_eq!(a.outlets[&(peer, ChannelClass::Register)].queue.len(), 1);
        assert_eq!(a.outlets[&(peer, ChannelClass::Register)].queue[0].op.round, 2);
    }

    #[test]
    fn datagram_slot_keeps_the_latest_arrival() {
        let mut b = Endpoint::new(uid(1), EndpointConfig::default());
        let mut out = Outbox::new();
        assert!(b.take_datagrams().is_empty());
        for seq in [1u64, 2] {
            let mut g = WireMessage::new(MsgType::Gossip, ChannelClass::Datagram, uid(0));
            g.token = seq;
            g.payload = bytes::Bytes::from(seq.to_be_bytes().to_vec());
            b.on_frame(g, &mut out, |_| unreachable!());
        }
        let got = b.take_datagrams();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1.payload.as_ref(), &2u64.to_be_bytes());
        assert!(out.frames.is_empty());
    }

    #[test]
    fn large_frames_use_the_bulk_path() {
        let mut a = Endpoint::new(uid(0), EndpointConfig::default());
        let mut out = Outbox::new();
        let big = query(uid(0)).with_element(Some(bytes::Bytes::from(vec![0u8; BULK_THRESHOLD + 1])));
        a.send_reliable(HwAddr::client(1), big, &mut out);
        a.send_reliable(HwAddr::client(2), query(uid(0)), &mut out);
        assert!(out.frames[0].bulk);
        assert!(!out.frames[1].bulk);
    }
}
