//! Operation records and their CSV form.

use std::fmt::Write as _;

use crate::linearizability::{CheckOp, RegState};
use crate::node::Micros;
use crate::types::{HwAddr, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Read,
    Write,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Write => "write",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// A read that found fewer than `k` elements; it returns no value.
    Unsuccessful,
    /// Invoked but never answered (the client crashed).
    Pending,
}

/// One client operation from invocation to response.
#[derive(Clone, Debug, PartialEq)]
pub struct OpRecord {
    pub client: HwAddr,
    /// Client life this operation belongs to.
    pub life: u32,
    pub seq: u64,
    pub kind: OpKind,
    /// Value id written, or read (0 is the initial empty object).
    pub value: u64,
    pub tag: Option<Tag>,
    pub invoke: Micros,
    pub respond: Option<Micros>,
    pub outcome: Outcome,
    /// Quorum rounds started on behalf of this operation.
    pub rounds: u32,
    /// Bytes sent and acknowledgment bytes received for this operation.
    pub bytes: u64,
    /// Restarts caused by a server reset.
    pub aborts: u32,
}

impl OpRecord {
    pub fn latency(&self) -> Option<Micros> {
        self.respond.map(|r| r - self.invoke)
    }

    pub fn is_complete(&self) -> bool {
        self.outcome == Outcome::Ok
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub ops: Vec<OpRecord>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: OpRecord) {
        self.ops.push(op);
    }

    pub fn completed(&self) -> impl Iterator<Item = &OpRecord> {
        self.ops.iter().filter(|o| o.is_complete())
    }

    /// Operations in the form the checker consumes. Unsuccessful reads carry
    /// no value and are left out; pending writes may or may not have taken
    /// effect; pending reads constrain nothing and are dropped.
    ///
    /// Operations are cut at `from`. A write still running there may have
    /// taken effect on either side of the cut, so it is kept as pending;
    /// reads invoked before the cut are dropped.
    pub fn check_ops(&self, from: Micros) -> Vec<CheckOp> {
        self.ops
            .iter()
            .filter_map(|o| {
                let before = o.invoke < from;
                let respond = match (o.outcome, o.kind) {
                    (Outcome::Ok, _) if !before => o.respond,
                    (Outcome::Ok | Outcome::Pending, OpKind::Write) if o.respond.is_none_or(|r| r >= from) => None,
                    _ => return None,
                };
                Some(CheckOp { kind: o.kind, value: o.value, invoke: o.invoke, respond })
            })
            .collect()
    }

    /// Checks the whole history from the initial empty register.
    pub fn check(&self) -> Result<crate::linearizability::Verdict, crate::linearizability::CheckError> {
        crate::linearizability::check(&self.check_ops(0), RegState::Value(0), &Default::default())
    }

    /// One row per invocation and per response.
    pub fn events_csv(&self) -> String {
        let mut rows: Vec<(Micros, usize, &'static str, &OpRecord)> = Vec::new();
        for (i, o) in self.ops.iter().enumerate() {
            rows.push((o.invoke, i, "invoke", o));
            if let Some(r) = o.respond {
                rows.push((r, i, "respond", o));
            }
        }
        rows.sort_by_key(|r| (r.0, r.1, r.2));
        let mut out = String::from("time_us,client,life,seq,op,event,value,tag,outcome\n");
        for (t, _, ev, o) in rows {
            let tag = o.tag.map(|t| format!("{}:{}:{}", t.seq, t.writer.hw, t.writer.inc)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{ev},{},{tag},{:?}",
                o.client,
                o.life,
                o.seq,
                o.kind.name(),
                o.value,
                o.outcome
            );
        }
        out
    }

    /// One row per operation with its accounting.
    pub fn ops_csv(&self) -> String {
        let mut out = String::from("client,life,seq,op,invoke_us,respond_us,latency_us,value,outcome,rounds,bytes,aborts\n");
        for o in &self.ops {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:?},{},{},{}",
                o.client,
                o.life,
                o.seq,
                o.kind.name(),
                o.invoke,
                o.respond.map(|r| r.to_string()).unwrap_or_default(),
                o.latency().map(|r| r.to_string()).unwrap_or_default(),
                o.value,
                o.outcome,
                o.rounds,
                o.bytes,
                o.aborts
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(kind: OpKind, value: u64, invoke: Micros, respond: Option<Micros>, outcome: Outcome) -> OpRecord {
        OpRecord {
            client: HwAddr::client(0),
            life: 1,
            seq: 0,
            kind,
            value,
            tag: None,
            invoke,
            respond,
            outcome,
            rounds: 2,
            bytes: 10,
            aborts: 0,
        }
    }

    #[test]
    fn check_ops_filters_by_outcome() {
        let mut h = History::new();
        h.push(op(OpKind::Write, 1, 0, Some(5), Outcome::Ok));
        h.push(op(OpKind::Read, 0, 6, Some(9), Outcome::Unsuccessful));
        h.push(op(OpKind::Write, 2, 10, None, Outcome::Pending));
        h.push(op(OpKind::Read, 0, 11, None, Outcome::Pending));
        let ops = h.check_ops(0);
        assert_eq!(ops.len(), 2);
        assert_eq!(ops[1].respond, None);
        assert_eq!(h.check_ops(6).len(), 1);
        // the write running across the cut may or may not have taken effect
        let cut = h.check_ops(4);
        assert_eq!(cut.len(), 2);
        assert_eq!(cut[0].respond, None);
    }

    #[test]
    fn csv_shapes() {
        let mut h = History::new();
        h.push(op(OpKind::Write, 1, 0, Some(5), Outcome::Ok));
        h.push(op(OpKind::Write, 2, 1, None, Outcome::Pending));
        assert_eq!(h.events_csv().lines().count(), 1 + 3);
        assert_eq!(h.ops_csv().lines().count(), 1 + 2);
    }
}
