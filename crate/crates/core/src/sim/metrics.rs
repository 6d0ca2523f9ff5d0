//! Run metrics and the determinism digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::history::History;
use crate::node::Micros;
use crate::types::Tag;
use crate::wire::MsgType;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResetRecord {
    pub server: usize,
    pub at: Micros,
    pub tag: Tag,
    pub epoch: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    /// Frames and bytes put on the wire, per message type.
    pub by_type: BTreeMap<MsgType, (u64, u64)>,
    pub lost: u64,
    pub duplicated: u64,
    /// Frames that reached a crashed node.
    pub dropped: u64,
    pub faults: u64,
    pub aborts: u64,
    /// Pre-crash responses delivered again to a restarted client.
    pub replayed: u64,
    /// Largest post-prune store size per server.
    pub max_records: Vec<usize>,
    /// Prunes that left the store above its bound or evicted the maximum finalized record.
    pub prune_violations: u64,
    /// Responses accepted that did not answer a request of the client's current life.
    pub stale_accepts: u64,
    /// `(client, life, incarnation)` in adoption order.
    pub incarnations: Vec<(usize, u32, u64)>,
    pub proposals: Vec<(usize, Micros, Tag)>,
    pub resets: Vec<ResetRecord>,
    /// Value written with the overflowing tag.
    pub overflow_value: Option<u64>,
    /// Start of the overflowing write's pre-write round.
    pub reset_start: Option<Micros>,
    /// First successful read completed after a reset began.
    pub reset_done: Option<Micros>,
    pub reset_read_value: Option<u64>,
    pub barrier_at: Option<Micros>,
    pub end_time: Micros,
    pub final_reset_idle: Vec<bool>,
    pub final_store_size: Vec<usize>,
}

impl Metrics {
    pub fn new(servers: usize) -> Metrics {
        Metrics {
            max_records: vec![0; servers],
            final_reset_idle: vec![false; servers],
            final_store_size: vec![0; servers],
            ..Default::default()
        }
    }

    pub(crate) fn count(&mut self, t: MsgType, len: usize) {
        let e = self.by_type.entry(t).or_default();
        e.0 += 1;
        e.1 += len as u64;
    }

    pub fn messages(&self) -> u64 {
        self.by_type.values().map(|v| v.0).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.by_type.values().map(|v| v.1).sum()
    }

    /// Virtual time from the overflowing pre-write to the first successful read after it.
    pub fn reset_duration(&self) -> Option<Micros> {
        Some(self.reset_done? - self.reset_start?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k},{v}");
        };
        for (t, (n, b)) in &self.by_type {
            row(&format!("messages.{}", t.name()), n.to_string());
            row(&format!("bytes.{}", t.name()), b.to_string());
        }
        row("lost", self.lost.to_string());
        row("duplicated", self.duplicated.to_string());
        row("dropped", self.dropped.to_string());
        row("faults", self.faults.to_string());
        row("aborts", self.aborts.to_string());
        row("replayed", self.replayed.to_string());
        row("prune_violations", self.prune_violations.to_string());
        row("stale_accepts", self.stale_accepts.to_string());
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        row("max_records", join(&self.max_records));
        row("final_store_size", join(&self.final_store_size));
        for (c, life, inc) in &self.incarnations {
            row("incarnation", format!("{c} {life} {inc}"));
        }
        for (s, at, t) in &self.proposals {
            row("proposal", format!("{s} {at} {}", t.seq));
        }
        for r in &self.resets {
            row("reset", format!("{} {} {} {}", r.server, r.at, r.tag.seq, r.epoch));
        }
        let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        row("reset_start", opt(self.reset_start));
        row("reset_done", opt(self.reset_done));
        row("barrier_at", opt(self.barrier_at));
        row("end_time", self.end_time.to_string());
        row("final_reset_idle", self.final_reset_idle.iter().map(|b| u8::from(*b).to_string()).collect::<Vec<_>>().join(" "));
        out
    }
}

pub(crate) fn digest(history: &History, metrics: &Metrics) -> String {
    let mut h = Sha256::new();
    h.update(history.ops_csv());
    h.update(history.events_csv());
    h.update(metrics.to_csv());
    hex::encode(h.finalize())
}
