//! Agreement-based global reset with coordinated phase transitions.
//!
//! Every server keeps its view of each server's proposal (`prp`) and of
//! whether that server saw everyone adopt it (`all`). Proposals move through
//! phases 1 → 2 → default; a server enters phase 2 only after all servers
//! acknowledged phase 1, and returns to default only after all reached phase
//! 2. Any inconsistency sets every proposal to ⊥, which drains back to the
//! default proposal once all servers have seen ⊥.

use std::collections::BTreeSet;

use bytes::{BufMut, Bytes, BytesMut};
use rand::Rng;

use crate::types::{HwAddr, Tag, Uid};
use crate::wire::{get_flag, get_tag, get_u8, put_tag, DecodeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Proposal {
    pub phase: u8,
    pub tag: Option<Tag>,
}

/// The idle proposal `⟨0, ⊥⟩`.
pub const DFLT: Proposal = Proposal { phase: 0, tag: None };

/// `None` is the ⊥ proposal used while recovering from a detected fault.
pub type Prp = Option<Proposal>;

/// A server's announced state: its own proposal and `all` flag.
pub type Announce = (Prp, bool);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResetState {
    me: usize,
    pub prp: Vec<Prp>,
    pub all: Vec<bool>,
    /// Last own state each peer acknowledged.
    pub echo: Vec<Option<Announce>>,
    pub all_seen: BTreeSet<usize>,
    /// Tag of the local reset already applied in the current phase 2.
    applied: Option<Tag>,
}

fn phase(p: Prp) -> u8 {
    p.map_or(0, |p| p.phase)
}

impl ResetState {
    pub fn new(me: usize, n: usize) -> Self {
        ResetState {
            me,
            prp: vec![Some(DFLT); n],
            all: vec![true; n],
            echo: vec![Some((Some(DFLT), true)); n],
            all_seen: (0..n).collect(),
            applied: None,
        }
    }

    fn n(&self) -> usize {
        self.prp.len()
    }

    pub fn own(&self) -> Announce {
        (self.prp[self.me], self.all[self.me])
    }

    /// True when the local proposal is the default one.
    pub fn is_idle(&self) -> bool {
        self.prp[self.me] == Some(DFLT)
    }

    /// A reset is under way and has not yet been applied locally.
    pub fn in_progress(&self) -> bool {
        !self.is_idle() && self.applied.is_none()
    }

    /// Lifts a phase-1 local proposal to `tag` if that is larger.
    pub fn raise(&mut self, tag: Tag) -> bool {
        match &mut self.prp[self.me] {
            Some(Proposal { phase: 1, tag: Some(t) }) if *t < tag => {
                *t = tag;
                true
            }
            _ => false,
        }
    }

    /// Every entry equals `(⟨0, ⊥⟩, true)`.
    pub fn enable_reset(&self) -> bool {
        self.prp.iter().all(|p| *p == Some(DFLT)) && self.all.iter().all(|a| *a)
    }

    pub fn propose(&mut self, tag: Tag) -> bool {
        if !self.enable_reset() {
            return false;
        }
        self.prp[self.me] = Some(Proposal { phase: 1, tag: Some(tag) });
        self.all[self.me] = false;
        true
    }

    /// A peer's announced state arrived.
    pub fn on_peer_state(&mut self, k: usize, (prp, all): Announce) {
        if k < self.n() && k != self.me {
            self.prp[k] = prp;
            self.all[k] = all;
            if all {
                self.all_seen.insert(k);
            }
        }
    }

    /// A peer acknowledged our state, echoing what it received.
    pub fn on_ack(&mut self, k: usize, peer: Announce, echoed: Announce) {
        if k < self.n() && k != self.me {
            self.on_peer_state(k, peer);
            self.echo[k] = Some(echoed);
        }
    }

    fn my_all(&self, k: usize) -> bool {
        self.all[k]
            || self
                .all_seen
                .iter()
                .any(|&l| self.prp[l].is_some() && (phase(self.prp[k]) + 1) % 3 == phase(self.prp[l]))
    }

    fn degree(&self, k: usize) -> u8 {
        2 * phase(self.prp[k]) + u8::from(self.my_all(k))
    }

    fn corr_deg(&self, a: u8, b: u8) -> bool {
        (a + 6 - b) % 6 != 3
    }

    fn greater_or_equal(&self, k: usize) -> bool {
        let mine = self.prp[self.me];
        let theirs = self.prp[k];
        mine == theirs
            || (mine.is_none() && theirs == Some(DFLT))
            || (mine.is_some() && theirs.is_some() && (phase(mine) + 1) % 3 == phase(theirs))
    }

    fn echo_no_all(&self, k: usize) -> bool {
        if k == self.me {
            return true;
        }
        self.echo[k].is_some_and(|e| e.0 == self.prp[self.me]) && self.greater_or_equal(k)
    }

    fn echo_matches(&self, k: usize) -> bool {
        if k == self.me {
            return true;
        }
        self.echo[k] == Some(self.own()) && self.greater_or_equal(k)
    }

    fn all_seen_everyone(&self) -> bool {
        self.all[self.me] && (0..self.n()).all(|k| k == self.me || self.all_seen.contains(&k))
    }

    fn max_prp(&self) -> Prp {
        let mine = self.prp[self.me];
        if mine.is_none() {
            return mine;
        }
        let di = self.degree(self.me);
        let close = (0..self.n()).all(|k| matches!((self.degree(k) + 6 - di) % 6, 0 | 1));
        if !close {
            return mine;
        }
        let phases: BTreeSet<u8> = self.prp.iter().flatten().map(|p| p.phase).collect();
        let phase = if phases == BTreeSet::from([0, 1]) { 1 } else { phase(mine) };
        let tag = self.prp.iter().flatten().map(|p| p.tag).max().flatten();
        Some(Proposal { phase, tag })
    }

    fn proposal_set(&self) -> BTreeSet<Tag> {
        if !self.prp.iter().flatten().any(|p| p.phase == 2) {
            return BTreeSet::new();
        }
        self.prp.iter().flatten().filter_map(|p| p.tag).collect()
    }

    /// Detectable signs of a transient fault.
    pub fn fault_detected(&self) -> bool {
        let n = self.n();
        let zero_with_tag = self.prp.iter().flatten().any(|p| p.phase == 0 && p.tag.is_some());
        let bad_phase = self.prp.iter().flatten().any(|p| p.phase > 2);
        let degrees: Vec<u8> = (0..n).map(|k| self.degree(k)).collect();
        let bad_degree = degrees.iter().any(|&a| degrees.iter().any(|&b| !self.corr_deg(a, b)));
        let mine = self.prp[self.me];
        let unseen_successor = mine.is_some()
            && (0..n).any(|k| {
                self.prp[k].is_some()
                    && (phase(mine) + 1) % 3 == phase(self.prp[k])
                    && !self.all_seen.contains(&k)
            });
        let mixed_bottom = self.prp.iter().any(Option::is_none) && mine.is_some() && mine != Some(DFLT);
        zero_with_tag
            || bad_phase
            || bad_degree
            || unseen_successor
            || self.proposal_set().len() > 1
            || mixed_bottom
    }

    fn set_all(&mut self, val: Prp) {
        for k in 0..self.n() {
            self.prp[k] = val;
            self.all[k] = false;
        }
    }

    /// One iteration of the do-forever loop. Returns the tag to reset the
    /// local store to, at most once per phase-2 visit.
    pub fn step(&mut self) -> Option<Tag> {
        let me = self.me;
        for k in 0..self.n() {
            if self.all[k] {
                self.all_seen.insert(k);
            }
        }
        if self.fault_detected() {
            self.set_all(None);
        }
        if self.prp[me].is_none() && self.all[me] {
            self.prp[me] = Some(DFLT);
        }
        let next = self.max_prp();
        let all = (0..self.n()).all(|k| self.echo_no_all(k));
        self.prp[me] = next;
        self.all[me] = all;
        let mut reset = None;
        let active = self.prp.iter().all(Option::is_some) && self.prp.iter().any(|p| *p != Some(DFLT));
        if active {
            if self.all_seen_everyone() && (0..self.n()).all(|k| self.echo_matches(k)) {
                let cur = self.prp[me].expect("active implies no ⊥");
                let (p, a) = match cur.phase {
                    1 => (Some(Proposal { phase: 2, tag: cur.tag }), false),
                    2 => (Some(DFLT), false),
                    _ => (self.prp[me], self.all[me]),
                };
                self.prp[me] = p;
                self.all[me] = a;
                self.all_seen.clear();
            }
            if let Some(Proposal { phase: 2, tag: Some(t) }) = self.prp[me] {
                if self.applied != Some(t) {
                    self.applied = Some(t);
                    reset = Some(t);
                }
            }
        }
        if phase(self.prp[me]) != 2 {
            self.applied = None;
        }
        reset
    }

    /// Transient fault: arbitrary values in every field.
    pub fn corrupt(&mut self, rng: &mut impl Rng) {
        let n = self.n();
        let arb_prp = |rng: &mut dyn rand::RngCore| -> Prp {
            match rng.gen_range(0..5) {
                0 => None,
                1 => Some(DFLT),
                _ => Some(Proposal {
                    phase: rng.gen_range(0..3),
                    tag: rng.gen_bool(0.7).then(|| arbitrary_tag(rng)),
                }),
            }
        };
        for k in 0..n {
            self.prp[k] = arb_prp(rng);
            self.all[k] = rng.gen_bool(0.5);
            self.echo[k] = if rng.gen_bool(0.8) { Some((arb_prp(rng), rng.gen_bool(0.5))) } else { None };
        }
        self.all_seen = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        self.applied = if rng.gen_bool(0.2) { Some(arbitrary_tag(rng)) } else { None };
    }
}

fn arbitrary_tag(rng: &mut dyn rand::RngCore) -> Tag {
    Tag::new(rng.gen_range(0..8), Uid::new(HwAddr::client(rng.gen_range(0..3)), rng.gen_range(0..3)))
}

fn put_prp(w: &mut BytesMut, p: &Prp) {
    match p {
        None => w.put_u8(0),
        Some(p) => {
            w.put_u8(1);
            w.put_u8(p.phase);
            match &p.tag {
                None => w.put_u8(0),
                Some(t) => {
                    w.put_u8(1);
                    put_tag(w, t);
                }
            }
        }
    }
}

fn get_prp(r: &mut Bytes) -> Result<Prp, DecodeError> {
    if !get_flag(r)? {
        return Ok(None);
    }
    let phase = get_u8(r)?;
    if phase > 2 {
        return Err(DecodeError::BadCode("reset phase", phase));
    }
    let tag = if get_flag(r)? { Some(get_tag(r)?) } else { None };
    Ok(Some(Proposal { phase, tag }))
}

/// Payload of a RESETSTATE request (`echo = None`) or its acknowledgment.
pub fn encode_exchange(own: Announce, echo: Option<Announce>) -> Bytes {
    let mut w = BytesMut::new();
    put_prp(&mut w, &own.0);
    w.put_u8(own.1 as u8);
    match echo {
        None => w.put_u8(0),
        Some((p, a)) => {
            w.put_u8(1);
            put_prp(&mut w, &p);
            w.put_u8(a as u8);
        }
    }
    w.freeze()
}

pub fn decode_exchange(mut raw: Bytes) -> Result<(Announce, Option<Announce>), DecodeError> {
    let r = &mut raw;
    let own = (get_prp(r)?, get_flag(r)?);
    let echo = if get_flag(r)? { Some((get_prp(r)?, get_flag(r)?)) } else { None };
    if !r.is_empty() {
        return Err(DecodeError::Trailing(r.len()));
    }
    Ok((own, echo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tag(seq: u64) -> Tag {
        Tag::new(seq, Uid::new(HwAddr::client(1), 1))
    }

    /// One request/acknowledgment exchange from `i` to `k`, each side stepping
    /// after it learns something. Returns local resets performed.
    fn exchange(s: &mut [ResetState], i: usize, k: usize, resets: &mut Vec<(usize, Tag)>) {
        let sent = s[i].own();
        s[k].on_peer_state(i, sent);
        if let Some(t) = s[k].step() {
            resets.push((k, t));
        }
        let reply = s[k].own();
        s[i].on_ack(k, reply, sent);
        if let Some(t) = s[i].step() {
            resets.push((i, t));
        }
    }

    fn sweep(s: &mut [ResetState], rng: &mut ChaCha8Rng, loss: f64, resets: &mut Vec<(usize, Tag)>) {
        let n = s.len();
        let mut pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k))).collect();
        pairs.shuffle(rng);
        for (i, k) in pairs {
            if !rng.gen_bool(loss) {
                exchange(s, i, k, resets);
            }
        }
    }

    fn settled(s: &[ResetState]) -> bool {
        s.iter().all(ResetState::enable_reset)
    }

    #[test]
    fn steady_state_is_closed() {
        let mut s: Vec<_> = (0..4).map(|i| ResetState::new(i, 4)).collect();
        let before = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut resets = Vec::new();
        for _ in 0..5 {
            sweep(&mut s, &mut rng, 0.0, &mut resets);
        }
        assert!(resets.is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn propose_is_gated() {
        let mut s = ResetState::new(0, 3);
        s.prp[2] = None;
        assert!(!s.propose(tag(5)));
        let mut s = ResetState::new(0, 3);
        assert!(s.propose(tag(5)));
        assert!(!s.propose(tag(6)));
        assert_eq!(s.prp[0], Some(Proposal { phase: 1, tag: Some(tag(5)) }));
    }

    #[test]
    fn agreed_proposal_resets_everyone_once() {
        for n in [2, 3, 5] {
            for seed in 0..50u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut s: Vec<_> = (0..n).map(|i| ResetState::new(i, n)).collect();
                for st in s.iter_mut() {
                    assert!(st.propose(tag(9)));
                }
                let mut resets = Vec::new();
                let mut rounds = 0;
                while !(settled(&s) && resets.len() == n) {
                    sweep(&mut s, &mut rng, 0.2, &mut resets);
                    rounds += 1;
                    assert!(rounds < 100, "n={n} seed={seed} stuck: {s:?}");
                }
                let mut who: Vec<usize> = resets.iter().map(|r| r.0).collect();
                who.sort();
                assert_eq!(who, (0..n).collect::<Vec<_>>());
                assert!(resets.iter().all(|r| r.1 == tag(9)));
            }
        }
    }

    #[test]
    fn single_proposer_drags_the_others_along() {
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s: Vec<_> = (0..n).map(|i| ResetState::new(i, n)).collect();
        assert!(s[2].propose(tag(4)));
        let mut resets = Vec::new();
        for _ in 0..30 {
            sweep(&mut s, &mut rng, 0.0, &mut resets);
        }
        assert!(settled(&s));
        assert_eq!(resets.len(), n);
    }

    #[test]
    fn conflicting_phase_two_proposals_are_a_fault() {
        let mut s = ResetState::new(0, 3);
        s.prp[1] = Some(Proposal { phase: 2, tag: Some(tag(1)) });
        s.prp[2] = Some(Proposal { phase: 2, tag: Some(tag(2)) });
        assert!(s.fault_detected());
        let mut s = ResetState::new(0, 3);
        s.prp[1] = Some(Proposal { phase: 0, tag: Some(tag(1)) });
        assert!(s.fault_detected());
        s.step();
        assert!(s.prp[1].is_none());
    }

    #[test]
    fn converges_from_arbitrary_corruption() {
        let mut worst = 0;
        for trial in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let n = rng.gen_range(2..=5);
            let mut s: Vec<_> = (0..n).map(|i| ResetState::new(i, n)).collect();
            for st in s.iter_mut() {
                st.corrupt(&mut rng);
            }
            let initial_tags: BTreeSet<Tag> =
                s.iter().flat_map(|st| st.prp.iter().flatten().filter_map(|p| p.tag)).collect();
            let mut resets = Vec::new();
            let mut rounds = 0;
            while !settled(&s) {
                sweep(&mut s, &mut rng, 0.1, &mut resets);
                rounds += 1;
                assert!(rounds <= 60, "trial {trial} did not converge: {s:?}");
            }
            worst = worst.max(rounds);
            // only tags that were somewhere in the corrupted state get applied
            assert!(resets.iter().all(|(_, t)| initial_tags.contains(t)), "trial {trial}");
            // and the settled state is closed
            let snapshot: Vec<_> = s.iter().map(|st| (st.prp.clone(), st.all.clone())).collect();
            let applied = resets.len();
            sweep(&mut s, &mut rng, 0.0, &mut resets);
            let after: Vec<_> = s.iter().map(|st| (st.prp.clone(), st.all.clone())).collect();
            assert_eq!(after, snapshot);
            assert_eq!(resets.len(), applied);
        }
        assert!(worst <= 60);
    }

    #[test]
    fn exchange_payload_roundtrip() {
        let own = (Some(Proposal { phase: 1, tag: Some(tag(3)) }), false);
        let echo = Some((None, true));
        assert_eq!(decode_exchange(encode_exchange(own, echo)).unwrap(), (own, echo));
        assert_eq!(decode_exchange(encode_exchange((Some(DFLT), true), None)).unwrap(), ((Some(DFLT), true), None));
        let mut bad = BytesMut::new();
        bad.put_u8(1);
        bad.put_u8(7);
        assert!(decode_exchange(bad.freeze()).is_err());
    }
}
