//! Event-loop interface shared by servers and clients.
//!
//! Nodes are sans-I/O state machines: a driver (the simulator or the network
//! runtime) feeds them [`Input`]s one at a time and carries out whatever they
//! leave in the [`Outbox`].

use crate::client::OpRequest;
use crate::history::OpRecord;
use crate::types::{HwAddr, Tag};
use crate::wire::{ChannelClass, PhaseId, WireMessage};

/// Microseconds, virtual in the simulator and since start-up on the network.
pub type Micros = u64;

pub const MS: Micros = 1_000;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum TimerKey {
    Retransmit { peer: HwAddr, class: ChannelClass, gen: u64 },
    Gossip,
    PhaseTimeout { op: PhaseId },
    Incarnation,
}

#[derive(Clone, Debug)]
pub enum Input {
    Start,
    Frame(WireMessage),
    Timer(TimerKey),
    /// Client only: begin an operation.
    Submit(OpRequest),
}

#[derive(Clone, Debug)]
pub struct Outgoing {
    pub to: HwAddr,
    pub msg: WireMessage,
    /// Routed over the bulk (stream) path rather than datagrams.
    pub bulk: bool,
}

/// Observable side effects reported to the driver.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeEvent {
    OpCompleted(OpRecord),
    /// A client accepted a response as belonging to its current round.
    ResponseAccepted { from: HwAddr, op: PhaseId },
    /// A client requested a round.
    RoundStarted { op: PhaseId },
    IncarnationAdopted { inc: u64 },
    /// A server installed a reset proposal.
    Proposed { tag: Tag },
    /// A server collapsed its storage to the agreed tag.
    LocalReset { tag: Tag, epoch: u64 },
    /// A server finished pruning; `size` is the post-prune record count.
    Pruned { size: usize, max_fin_kept: bool },
    /// A client aborted its operation because a server's epoch changed.
    Aborted { op: PhaseId },
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub frames: Vec<Outgoing>,
    pub timers: Vec<(Micros, TimerKey)>,
    pub events: Vec<NodeEvent>,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn timer(&mut self, after: Micros, key: TimerKey) {
        self.timers.push((after, key));
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty() && self.timers.is_empty() && self.events.is_empty()
    }
}

pub trait Node: Send {
    fn addr(&self) -> HwAddr;

    fn handle(&mut self, now: Micros, input: Input, out: &mut Outbox);
}
