//! The bounded-counter token channel recovering from corrupted counters.

use casss::transport::channel::{AckOutcome, ReceiverState, SenderState, Verdict};

fn main() {
    let mut s = SenderState { counter: 1, cap: 3 };
    let mut r = ReceiverState { counter: 2, cap: 3 };
    for msg in 0..6 {
        loop {
            let t = s.token();
            let v = r.classify(t);
            if v == Verdict::Fresh {
                r.accept(t);
            }
            let outcome = s.on_ack(r.token());
            println!("message {msg}: token {t} {v:?}, ack {} -> {outcome:?}", r.token());
            if outcome == AckOutcome::Arrived {
                break;
            }
        }
    }
}
