//! Stop-and-wait token passing with counters modulo `cap + 1`.
//!
//! The sender holds the pending message until an acknowledgment carrying its
//! own counter value returns, then advances the counter. The receiver delivers
//! a message whose token lies strictly ahead of its own counter and answers
//! every arrival with its counter. Retransmission happens on timeout only.
//!
//! Both sides tolerate arbitrary starting counters: a receiver that is "ahead"
//! of the sender is detected from its acknowledgments and the sender jumps past
//! it. Tokens a few values behind the receiver's counter are treated as stale
//! copies, which keeps delivery exactly-once when the network reorders or
//! duplicates recent frames.

/// Default channel capacity bound.
pub const DEFAULT_CAP: u64 = 8;

fn stale_window(cap: u64) -> u64 {
    if cap >= 2 {
        cap / 2
    } else {
        0
    }
}

/// What an acknowledgment means to the sender.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckOutcome {
    /// The token returned: the pending message was delivered.
    Arrived,
    /// A stale acknowledgment.
    Ignored,
    /// The receiver's counter is ahead of ours; the sender moved past it and
    /// will retransmit the pending message under the new token.
    Resynced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SenderState {
    pub counter: u64,
    pub cap: u64,
}

impl SenderState {
    pub fn new(cap: u64) -> Self {
        SenderState { counter: 0, cap: cap.max(1) }
    }

    fn modulus(&self) -> u64 {
        self.cap + 1
    }

    /// Token to stamp on the pending message.
    pub fn token(&self) -> u64 {
        self.counter % self.modulus()
    }

    pub fn on_ack(&mut self, ack_token: u64) -> AckOutcome {
        let m = self.modulus();
        let s = self.counter % m;
        let a = ack_token % m;
        let behind = (s + m - a) % m;
        if behind == 0 {
            self.counter = (s + 1) % m;
            AckOutcome::Arrived
        } else if behind <= stale_window(self.cap).max(1) {
            AckOutcome::Ignored
        } else {
            self.counter = (a + 1) % m;
            AckOutcome::Resynced
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Fresh,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceiverState {
    pub counter: u64,
    pub cap: u64,
}

impl ReceiverState {
    pub fn new(cap: u64) -> Self {
        // The sender starts at 0, so a fresh receiver sits one behind it.
        ReceiverState { counter: cap.max(1), cap: cap.max(1) }
    }

    fn modulus(&self) -> u64 {
        self.cap + 1
    }

    pub fn classify(&self, token: u64) -> Verdict {
        let m = self.modulus();
        let ahead = (token % m + m - self.counter % m) % m;
        if ahead >= 1 && ahead <= m - 1 - stale_window(self.cap) {
            Verdict::Fresh
        } else {
            Verdict::Duplicate
        }
    }

    /// Records delivery of `token`.
    pub fn accept(&mut self, token: u64) {
        self.counter = token % self.modulus();
    }

    /// Token echoed on acknowledgments.
    pub fn token(&self) -> u64 {
        self.counter % self.modulus()
    }
}
