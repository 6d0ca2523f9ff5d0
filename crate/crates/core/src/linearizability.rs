//! Linearizability checking for a single read/write register.
//!
//! The search follows Wing and Gong with Lowe's memoization: repeatedly pick
//! a minimal operation (one no unlinearized completed operation precedes),
//! apply it to the register state, and backtrack on failure, caching visited
//! `(linearized set, state)` pairs. Histories are first cut at quiescent
//! points; the set of states reachable at the end of one window seeds the
//! next.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::history::OpKind;
use crate::node::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckOp {
    pub kind: OpKind,
    pub value: u64,
    pub invoke: Micros,
    /// `None` for a pending operation, which may or may not take effect.
    pub respond: Option<Micros>,
}

/// Register contents during the search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegState {
    /// Arbitrary initial contents (after transient faults): the first read
    /// may return any value no operation in the history writes.
    Unknown,
    Value(u64),
}

#[derive(Clone, Debug)]
pub struct Limits {
    /// Largest number of operations in one window.
    pub max_window: usize,
    /// Largest number of memoized search states per window.
    pub max_states: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_window: 200_000, max_states: 4_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("window of {ops} operations exceeds the checker bound")]
    StateSpaceExceeded { ops: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Indices of the operations in the window that could not be linearized.
    pub window: Vec<usize>,
    /// Two operations whose order contradicts register semantics, when one
    /// such pair can be named: `(a, b)` with `a` forcing a state `b` cannot see.
    pub pair: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Indices in linearization order (pending operations that never took
    /// effect are omitted).
    Linearizable { order: Vec<usize> },
    Violation(Violation),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Linearizable { .. })
    }
}

fn respond_key(op: &CheckOp) -> Micros {
    op.respond.unwrap_or(Micros::MAX)
}

/// `a` finished before `b` started.
fn precedes(a: &CheckOp, b: &CheckOp) -> bool {
    a.respond.is_some_and(|r| r < b.invoke)
}

fn apply(op: &CheckOp, state: RegState, written: &BTreeSet<u64>) -> Option<RegState> {
    match op.kind {
        OpKind::Write => Some(RegState::Value(op.value)),
        OpKind::Read => match state {
            RegState::Value(v) if v == op.value => Some(state),
            RegState::Unknown if !written.contains(&op.value) => Some(RegState::Value(op.value)),
            _ => None,
        },
    }
}

/// Search position: completed operations `< p` and those in `extra` are
/// linearized, as are the pending ones set in `pend`.
#[derive(Clone, PartialEq, Eq, Hash)]
struct Key {
    p: usize,
    extra: Vec<usize>,
    pend: u64,
    state: RegState,
}

#[derive(Clone, Copy)]
enum Cand {
    Done(usize),
    Pend(usize),
}

struct Frame {
    key: Key,
    cands: Vec<Cand>,
    next: usize,
}

struct Window<'a> {
    /// Completed operations in invocation order.
    done: Vec<(usize, &'a CheckOp)>,
    pend: Vec<(usize, &'a CheckOp)>,
    written: &'a BTreeSet<u64>,
    memo: HashSet<Key>,
    /// End state → (start state, order) of one witness.
    ends: BTreeMap<RegState, (RegState, Vec<usize>)>,
    max_states: usize,
    exceeded: bool,
}

impl<'a> Window<'a> {
    fn new(ops: &'a [CheckOp], w: &[usize], written: &'a BTreeSet<u64>, limits: &Limits) -> Self {
        let (done, pend) = w.iter().map(|&i| (i, &ops[i])).partition(|(_, o)| o.respond.is_some());
        Window {
            done,
            pend,
            written,
            memo: HashSet::new(),
            ends: BTreeMap::new(),
            max_states: limits.max_states,
            exceeded: false,
        }
    }

    /// Operations that may go next: invoked before every unlinearized
    /// completed operation responded.
    fn candidates(&self, key: &Key) -> Vec<Cand> {
        let lin = |j: usize| key.extra.binary_search(&j).is_ok();
        let mut min_resp = Micros::MAX;
        for j in key.p..self.done.len() {
            let op = self.done[j].1;
            if op.invoke > min_resp {
                break;
            }
            if !lin(j) {
                min_resp = min_resp.min(respond_key(op));
            }
        }
        let mut out = Vec::new();
        for j in key.p..self.done.len() {
            if self.done[j].1.invoke > min_resp {
                break;
            }
            if !lin(j) {
                out.push(Cand::Done(j));
            }
        }
        for (k, (_, op)) in self.pend.iter().enumerate() {
            if key.pend >> k & 1 == 0 && op.invoke <= min_resp {
                out.push(Cand::Pend(k));
            }
        }
        out
    }

    fn child(&self, key: &Key, c: Cand) -> Option<(Key, usize)> {
        let (idx, op) = match c {
            Cand::Done(j) => self.done[j],
            Cand::Pend(k) => self.pend[k],
        };
        let state = apply(op, key.state, self.written)?;
        let mut next = Key { state, ..key.clone() };
        match c {
            Cand::Done(j) => {
                let at = next.extra.binary_search(&j).unwrap_err();
                next.extra.insert(at, j);
                while next.extra.first() == Some(&next.p) {
                    next.extra.remove(0);
                    next.p += 1;
                }
            }
            Cand::Pend(k) => next.pend |= 1 << k,
        }
        Some((next, idx))
    }

    fn search(&mut self, start: RegState) {
        if self.pend.len() > 64 {
            self.exceeded = true;
            return;
        }
        let root = Key { p: 0, extra: Vec::new(), pend: 0, state: start };
        let mut path = Vec::new();
        if !self.visit(&root, start, &path) {
            return;
        }
        let mut stack = vec![Frame { cands: self.candidates(&root), key: root, next: 0 }];
        while let Some(top) = stack.last_mut() {
            if self.exceeded {
                return;
            }
            if top.next == top.cands.len() {
                stack.pop();
                path.pop();
                continue;
            }
            let c = top.cands[top.next];
            top.next += 1;
            let Some((key, idx)) = self.child(&top.key, c) else { continue };
            path.push(idx);
            if self.visit(&key, start, &path) {
                stack.push(Frame { cands: self.candidates(&key), key, next: 0 });
            } else {
                path.pop();
            }
        }
    }

    /// Records `key` as explored; false if it was already.
    fn visit(&mut self, key: &Key, start: RegState, path: &[usize]) -> bool {
        if !self.memo.insert(key.clone()) {
            return false;
        }
        if self.memo.len() > self.max_states {
            self.exceeded = true;
        }
        if key.p == self.done.len() {
            self.ends.entry(key.state).or_insert_with(|| (start, path.to_vec()));
        }
        true
    }
}

/// Splits `order` (indices sorted by invocation) at quiescent points.
fn windows(ops: &[CheckOp], order: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut horizon: Option<Micros> = None;
    for &i in order {
        let op = &ops[i];
        match horizon {
            Some(h) if op.invoke <= h => {
                out.last_mut().expect("window open").push(i);
                horizon = Some(h.max(respond_key(op)));
            }
            _ => {
                out.push(vec![i]);
                horizon = Some(respond_key(op));
            }
        }
    }
    out
}

/// Looks for two operations whose real-time order alone rules out a
/// linearization.
fn explain(ops: &[CheckOp], window: &[usize], initial: RegState) -> Option<(usize, usize)> {
    let writer_of = |v: u64| ops.iter().position(|o| o.kind == OpKind::Write && o.value == v);
    for &r in window {
        let read = &ops[r];
        if read.kind != OpKind::Read {
            continue;
        }
        match writer_of(read.value) {
            Some(w) => {
                if precedes(read, &ops[w]) {
                    return Some((r, w));
                }
                for (w2, other) in ops.iter().enumerate() {
                    if w2 != w && other.kind == OpKind::Write && precedes(&ops[w], other) && precedes(other, read) {
                        return Some((w2, r));
                    }
                }
            }
            None => {
                if initial != RegState::Value(read.value) && initial != RegState::Unknown {
                    return Some((r, r));
                }
                for (w2, other) in ops.iter().enumerate() {
                    if other.kind == OpKind::Write && precedes(other, read) {
                        return Some((w2, r));
                    }
                }
            }
        }
    }
    // read/read inversion
    for &a in window {
        for &b in window {
            let (ra, rb) = (&ops[a], &ops[b]);
            if ra.kind != OpKind::Read || rb.kind != OpKind::Read || !precedes(ra, rb) {
                continue;
            }
            if let (Some(wa), Some(wb)) = (writer_of(ra.value), writer_of(rb.value)) {
                if precedes(&ops[wb], &ops[wa]) {
                    return Some((a, b));
                }
            }
        }
    }
    None
}

/// Decides whether `ops` has a linearization starting from `initial`.
pub fn check(ops: &[CheckOp], initial: RegState, limits: &Limits) -> Result<Verdict, CheckError> {
    let written: BTreeSet<u64> = ops.iter().filter(|o| o.kind == OpKind::Write).map(|o| o.value).collect();
    let mut order: Vec<usize> = (0..ops.len()).collect();
    order.sort_by_key(|&i| (ops[i].invoke, respond_key(&ops[i]), i));
    let mut starts: BTreeSet<RegState> = BTreeSet::from([initial]);
    let mut trail: Vec<BTreeMap<RegState, (RegState, Vec<usize>)>> = Vec::new();
    for w in windows(ops, &order) {
        if w.len() > limits.max_window {
            return Err(CheckError::StateSpaceExceeded { ops: w.len() });
        }
        let mut win = Window::new(ops, &w, &written, limits);
        for &s in &starts {
            win.search(s);
        }
        if win.exceeded {
            return Err(CheckError::StateSpaceExceeded { ops: w.len() });
        }
        if win.ends.is_empty() {
            let pair = explain(ops, &w, initial);
            return Ok(Verdict::Violation(Violation { window: w, pair }));
        }
        starts = win.ends.keys().copied().collect();
        trail.push(win.ends);
    }
    // stitch one witness together, last window first
    let mut order = Vec::new();
    let mut want: Option<RegState> = None;
    for ends in trail.iter().rev() {
        let (start, path) = match want {
            None => ends.values().next().expect("non-empty"),
            Some(s) => ends.get(&s).expect("state reached by the previous window"),
        };
        order.splice(0..0, path.iter().copied());
        want = Some(*start);
    }
    Ok(Verdict::Linearizable { order })
}

/// Exhaustive permutation check for small histories; test oracle.
pub fn brute_force(ops: &[CheckOp], initial: RegState) -> bool {
    let written: BTreeSet<u64> = ops.iter().filter(|o| o.kind == OpKind::Write).map(|o| o.value).collect();
    let pending: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].respond.is_none()).collect();
    let required: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].respond.is_some()).collect();
    for mask in 0u32..(1 << pending.len()) {
        let mut chosen = required.clone();
        chosen.extend(pending.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &i)| i));
        chosen.sort();
        if permutations_ok(ops, &mut chosen, 0, initial, &written) {
            return true;
        }
    }
    false
}

/// Extends the prefix `p[..k]` one op at a time: an op may go next when no
/// other unplaced op finished before it was invoked and the register allows it.
fn permutations_ok(ops: &[CheckOp], p: &mut Vec<usize>, k: usize, state: RegState, written: &BTreeSet<u64>) -> bool {
    if k == p.len() {
        return true;
    }
    for i in k..p.len() {
        let cand = &ops[p[i]];
        if p[k..].iter().any(|&o| precedes(&ops[o], cand)) {
            continue;
        }
        let Some(next) = apply(cand, state, written) else { continue };
        p.swap(k, i);
        let ok = permutations_ok(ops, p, k + 1, next, written);
        p.swap(k, i);
        if ok {
            return true;
        }
    }
    false
}
