//! Recyclable client identities.
//!
//! Servers keep a bounded FIFO of the highest incarnation number per hardware
//! address. Clients query a majority at boot and periodically, and move to a
//! fresh incarnation when the quorum disagrees with their own.

use std::collections::VecDeque;

use bytes::{BufMut, Bytes, BytesMut};

use crate::types::HwAddr;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IncarnationQueue {
    entries: VecDeque<(HwAddr, u64)>,
    capacity: usize,
}

impl IncarnationQueue {
    pub fn new(capacity: usize) -> Self {
        IncarnationQueue { entries: VecDeque::new(), capacity: capacity.max(1) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &(HwAddr, u64)> {
        self.entries.iter()
    }

    /// Largest queued incarnation number.
    pub fn max_inc(&self) -> u64 {
        self.entries.iter().map(|e| e.1).max().unwrap_or(0)
    }

    /// Answer to an incarnation query from `hw`; `None` means stay silent
    /// because some entry reached `max_inc`.
    pub fn query(&mut self, hw: HwAddr, max_inc: u64) -> Option<u64> {
        if self.entries.iter().any(|e| e.1 >= max_inc) {
            return None;
        }
        match self.entries.iter().position(|e| e.0 == hw) {
            Some(pos) => {
                let e = self.entries.remove(pos).expect("position is valid");
                self.entries.push_back(e);
                Some(e.1)
            }
            None => Some(0),
        }
    }

    /// Records `inc` as the current incarnation of `hw`.
    pub fn update(&mut self, hw: HwAddr, inc: u64) {
        self.entries.retain(|e| e.0 != hw);
        self.entries.push_back((hw, inc));
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Replaces the contents verbatim (fault injection). Duplicates and
    /// overfull queues are allowed here; later updates repair them.
    pub fn put_raw(&mut self, entries: Vec<(HwAddr, u64)>) {
        self.entries = entries.into();
    }
}

/// What the client does after an incarnation query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncDecision {
    Keep,
    Adopt(u64),
    /// The next number would reach the bound; servers must reset first.
    Overflow,
}

/// `m` is the largest number reported by the quorum. A booting client holds
/// no valid number of its own and always moves past `m`.
pub fn decide(m: u64, current: u64, booting: bool, max_inc: u64) -> IncDecision {
    if !booting && m == current {
        return IncDecision::Keep;
    }
    let base = if booting { m } else { m.max(current) };
    match base.checked_add(1) {
        Some(n) if n < max_inc => IncDecision::Adopt(n),
        _ => IncDecision::Overflow,
    }
}

pub fn inc_payload(inc: u64) -> Bytes {
    let mut w = BytesMut::with_capacity(8);
    w.put_u64(inc);
    w.freeze()
}

pub fn inc_from_payload(raw: &Bytes) -> Option<u64> {
    (raw.len() == 8).then(|| u64::from_be_bytes(raw[..].try_into().unwrap()))
}
