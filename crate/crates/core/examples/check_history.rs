//! Linearizability checking of hand-written register histories.

use casss::linearizability::{check, CheckOp, Limits, RegState, Verdict};
use casss::OpKind;

fn op(kind: OpKind, value: u64, invoke: u64, respond: Option<u64>) -> CheckOp {
    CheckOp { kind, value, invoke, respond }
}

fn main() {
    let good = [
        op(OpKind::Write, 1, 0, Some(10)),
        op(OpKind::Write, 2, 5, Some(20)),
        op(OpKind::Read, 2, 12, Some(18)),
        op(OpKind::Read, 2, 25, Some(30)),
        // a crashed writer: may or may not have taken effect
        op(OpKind::Write, 3, 26, None),
    ];
    println!("{:?}", check(&good, RegState::Value(0), &Limits::default()).unwrap());

    // a read that returns an overwritten value after a newer one was read
    let stale = [
        op(OpKind::Write, 1, 0, Some(10)),
        op(OpKind::Write, 2, 11, Some(20)),
        op(OpKind::Read, 2, 21, Some(25)),
        op(OpKind::Read, 1, 26, Some(30)),
    ];
    match check(&stale, RegState::Value(0), &Limits::default()).unwrap() {
        Verdict::Violation(v) => println!("violation in window {:?}, conflicting pair {:?}", v.window, v.pair),
        v => println!("unexpected {v:?}"),
    }

    // after transient faults the starting contents are unknown
    let recovered = [op(OpKind::Read, 42, 0, Some(5)), op(OpKind::Write, 7, 6, Some(9)), op(OpKind::Read, 7, 10, Some(12))];
    println!("{:?}", check(&recovered, RegState::Unknown, &Limits::default()).unwrap());
}
