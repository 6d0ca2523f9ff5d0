//! Client-side response collection for one quorum round.

use std::collections::BTreeMap;

use crate::node::Micros;
use crate::types::HwAddr;
use crate::wire::{PhaseId, WireMessage};

/// Collects the first `needed` responses carrying the current phase identifier.
#[derive(Clone, Debug)]
pub struct PhaseCollector {
    pub phase: PhaseId,
    pub needed: usize,
    pub started: Micros,
    responses: BTreeMap<HwAddr, WireMessage>,
}

impl PhaseCollector {
    pub fn new(phase: PhaseId, needed: usize, started: Micros) -> Self {
        PhaseCollector { phase, needed, started, responses: BTreeMap::new() }
    }

    /// Records a response. Returns false for stale, duplicate or surplus
    /// responses, which do not count toward the quorum.
    pub fn offer(&mut self, from: HwAddr, msg: WireMessage) -> bool {
        if msg.op != self.phase || self.is_complete() || self.responses.contains_key(&from) {
            return false;
        }
        self.responses.insert(from, msg);
        true
    }

    pub fn is_complete(&self) -> bool {
        self.responses.len() >= self.needed
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn responses(&self) -> &BTreeMap<HwAddr, WireMessage> {
        &self.responses
    }
}
