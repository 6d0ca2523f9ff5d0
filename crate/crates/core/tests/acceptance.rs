//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use casss::codec::{element_len, Codec};
use casss::linearizability::{check, Limits, RegState};
use casss::node::{Micros, MS};
use casss::sim::{run_scenario, FaultKind, FaultSpec, NodeRef, ScenarioConfig, SimResult};
use casss::wire::MsgType;
use casss::{OpKind, Outcome, Variant};

type Finding = Result<String, String>;
type Criterion = (&'static str, fn() -> Finding);

fn run(sc: &ScenarioConfig) -> SimResult {
    run_scenario(sc).expect("valid scenario")
}

fn lin_ok(r: &SimResult) -> bool {
    matches!(r.history.check(), Ok(v) if v.is_ok())
}

fn lossy(sc: &mut ScenarioConfig) {
    sc.link.loss = 0.10;
    sc.link.dup = 0.05;
    sc.link.reorder = 0.10;
}

fn soak_config(variant: Variant, seed: u64) -> ScenarioConfig {
    let mut sc = ScenarioConfig::new(variant, 5, 1, 3);
    sc.seed = seed;
    sc.ops_per_client = 15;
    sc.inter_op_delay = 50 * MS;
    lossy(&mut sc);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    if rng.gen_bool(0.7) {
        let s = rng.gen_range(0..5);
        let at = rng.gen_range(0..2_000 * MS);
        sc.faults.push(FaultSpec { at, kind: FaultKind::Crash, target: NodeRef::Server(s) });
        if rng.gen_bool(0.5) {
            let back = at + rng.gen_range(100 * MS..1_500 * MS);
            sc.faults.push(FaultSpec { at: back, kind: FaultKind::Restart, target: NodeRef::Server(s) });
        }
    }
    sc
}

fn soak() -> Finding {
    let started = Instant::now();
    let mut detail = Vec::new();
    for v in Variant::ALL {
        let bad: Vec<u64> = (0..500u64)
            .into_par_iter()
            .filter(|&seed| {
                let r = run(&soak_config(v, seed));
                !(r.finished && lin_ok(&r))
            })
            .collect();
        if !bad.is_empty() {
            return Err(format!("{v:?}: seeds {bad:?} unfinished or not linearizable"));
        }
        detail.push(format!("{v:?} 500/500"));
    }
    let secs = started.elapsed().as_secs_f64();
    if secs > 600.0 {
        return Err(format!("took {secs:.0}s"));
    }
    Ok(format!("{} in {secs:.1}s", detail.join(", ")))
}

fn rounds() -> Finding {
    let expected = [
        (Variant::MwAbd, OpKind::Write, 2),
        (Variant::MwAbd, OpKind::Read, 2),
        (Variant::Cas, OpKind::Write, 3),
        (Variant::Cas, OpKind::Read, 2),
        (Variant::Casss, OpKind::Write, 4),
        (Variant::Casss, OpKind::Read, 2),
    ];
    let register = [MsgType::Query, MsgType::PreWrite, MsgType::FinWrite, MsgType::FinRead, MsgType::FinFin];
    let mut seen = Vec::new();
    for (v, kind, want) in expected {
        let (w, r) = if kind == OpKind::Write { (1, 0) } else { (0, 1) };
        let mut sc = ScenarioConfig::new(v, 5, 1, 1).with_roles(w, r);
        sc.ops_per_client = 1;
        let res = run(&sc);
        let op = &res.history.ops[0];
        let frames: u64 = register.iter().filter_map(|t| res.metrics.by_type.get(t)).map(|c| c.0).sum();
        let n = sc.quorum.n() as u64;
        if !frames.is_multiple_of(n) || frames / n != want || op.rounds as u64 != want {
            return Err(format!("{v:?} {kind:?}: {frames} request frames to {n} servers, {} rounds recorded, want {want}", op.rounds));
        }
        seen.push(format!("{v:?} {}={want}", kind.name()));
    }
    Ok(seen.join(" "))
}

/// Triangular sample by inverse CDF.
fn triangular(rng: &mut impl Rng, a: f64, c: f64, b: f64) -> f64 {
    let u: f64 = rng.gen();
    let fc = (c - a) / (b - a);
    if u < fc {
        a + (u * (b - a) * (c - a)).sqrt()
    } else {
        b - ((1.0 - u) * (b - a) * (b - c)).sqrt()
    }
}

/// Expected `q`-th smallest of `n` round-trip times, each the sum of two link latencies.
fn order_statistic_rtt(n: usize, q: usize, a: f64, c: f64, b: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 200_000;
    let mut sum = 0.0;
    let mut rtts = vec![0.0; n];
    for _ in 0..trials {
        for x in rtts.iter_mut() {
            *x = triangular(&mut rng, a, c, b) + triangular(&mut rng, a, c, b);
        }
        rtts.sort_by(f64::total_cmp);
        sum += rtts[q - 1];
    }
    sum / trials as f64
}

fn mean_write_latency(r: &SimResult) -> f64 {
    let l: Vec<f64> = r
        .history
        .ops
        .iter()
        .filter(|o| o.kind == OpKind::Write && o.outcome == Outcome::Ok)
        .filter_map(|o| o.latency())
        .map(|l| l as f64)
        .collect();
    l.iter().sum::<f64>() / l.len() as f64
}

fn overhead() -> Finding {
    let (n, f) = (5usize, 1usize);
    let k = n - 2 * f;
    let q = (n + k).div_ceil(2);
    let base = ScenarioConfig::new(Variant::Cas, n, f, 1);
    let l = base.link.latency;
    let oracle = order_statistic_rtt(n, q, l.min as f64, l.mode as f64, l.max as f64);
    let mut seen = Vec::new();
    for size in [1024, 512 * 1024] {
        let mut gap = 0.0;
        let seeds = 4;
        for seed in 0..seeds {
            let lat = |v| {
                let mut sc = ScenarioConfig::new(v, n, f, 1).with_roles(1, 0);
                sc.seed = seed;
                sc.object_size = size;
                sc.ops_per_client = 200;
                sc.inter_op_delay = 10 * MS;
                mean_write_latency(&run(&sc))
            };
            gap += lat(Variant::Casss) - lat(Variant::Cas);
        }
        gap /= seeds as f64;
        let err = (gap - oracle).abs() / oracle;
        seen.push(format!("{} KiB gap {:.1} ms", size / 1024, gap / 1e3));
        if err > 0.10 {
            return Err(format!("{}; oracle {:.1} ms, off by {:.1}%", seen.join(", "), oracle / 1e3, err * 100.0));
        }
    }
    Ok(format!("{} vs oracle {:.1} ms", seen.join(", "), oracle / 1e3))
}

fn bytes() -> Finding {
    let per_op = |v| {
        let mut sc = ScenarioConfig::new(v, 10, 2, 2).with_roles(1, 1);
        sc.quorum.k = 6;
        sc.object_size = 512 * 1024;
        sc.ops_per_client = 10;
        let r = run(&sc);
        let total: u64 = r.history.ops.iter().map(|o| o.bytes).sum();
        (total as f64 / r.history.ops.len() as f64, r.metrics.bytes() as f64)
    };
    let (casss, casss_net) = per_op(Variant::Casss);
    let (abd, abd_net) = per_op(Variant::MwAbd);
    let ratio = casss / abd;
    let net_ratio = casss_net / abd_net;
    if ratio < 0.5 && net_ratio < 0.5 {
        Ok(format!("per-op ratio {ratio:.3}, network ratio {net_ratio:.3}"))
    } else {
        Err(format!("per-op ratio {ratio:.3}, network ratio {net_ratio:.3}"))
    }
}

fn storage() -> Finding {
    let (clients, delta) = (5usize, 4usize);
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, clients);
    sc.quorum.delta = delta;
    sc.ops_per_client = 2_000;
    sc.inter_op_delay = 20 * MS;
    sc.seed = 11;
    let r = run(&sc);
    let bound = clients + delta + 3;
    let m = &r.metrics;
    let ops = r.history.ops.len();
    let worst = *m.max_records.iter().max().unwrap();
    if ops < 10_000 {
        return Err(format!("only {ops} operations ran"));
    }
    if worst > bound || m.prune_violations > 0 {
        return Err(format!("max records {worst} (bound {bound}), {} prune violations", m.prune_violations));
    }
    if !lin_ok(&r) {
        return Err("history not linearizable".into());
    }
    Ok(format!("{ops} ops, max records {worst} <= {bound}, max finalized always kept"))
}

fn reset_config(n: usize, seed: u64) -> ScenarioConfig {
    let mut sc = ScenarioConfig::new(Variant::Casss, n, 0, 2).with_roles(1, 1);
    sc.seed = seed;
    sc.ops_per_client = 20;
    sc.inter_op_delay = 300 * MS;
    sc.overflow_write_at = Some(2_000 * MS);
    sc.settle = 2_000 * MS;
    sc
}

fn reset() -> Finding {
    let mut worst: f64 = 0.0;
    for n in [3, 5, 10] {
        let failures: Vec<String> = (0..20u64)
            .into_par_iter()
            .filter_map(|seed| {
                let r = run(&reset_config(n, seed));
                let m = &r.metrics;
                let servers: std::collections::BTreeSet<usize> = m.resets.iter().map(|x| x.server).collect();
                let agreed = m.resets.iter().all(|x| x.tag == m.resets[0].tag && x.epoch == m.resets[0].epoch);
                let forced = m.overflow_value;
                let writes: Vec<f64> = r
                    .history
                    .ops
                    .iter()
                    .filter(|o| o.kind == OpKind::Write && Some(o.value) != forced && o.outcome == Outcome::Ok)
                    .filter_map(|o| o.latency())
                    .map(|l| l as f64)
                    .collect();
                let three = 3.0 * writes.iter().sum::<f64>() / writes.len() as f64;
                let why = if servers.len() != n || m.resets.len() != n {
                    format!("{} local resets at {} servers", m.resets.len(), servers.len())
                } else if !agreed {
                    "servers reset to different tags".into()
                } else if m.reset_read_value.is_none() || m.reset_read_value != forced {
                    format!("read {:?} after reset, want {forced:?}", m.reset_read_value)
                } else if m.reset_duration().is_none_or(|d| d as f64 > three) {
                    format!("reset took {:?} us, three writes {three:.0} us", m.reset_duration())
                } else if !m.final_reset_idle.iter().all(|&b| b) {
                    "reset state not idle at the end".into()
                } else if !lin_ok(&r) {
                    "history not linearizable".into()
                } else {
                    return None;
                };
                Some(format!("N={n} seed {seed}: {why}"))
            })
            .collect();
        if let Some(first) = failures.first() {
            return Err(format!("{} failures; {first}", failures.len()));
        }
        let r = run(&reset_config(n, 0));
        worst = worst.max(r.metrics.reset_duration().unwrap_or(0) as f64 / 1e3);
    }
    Ok(format!("60/60 trials, seed-0 reset at most {worst:.0} ms"))
}

fn selfstab_config(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, 3);
    sc.seed = seed;
    sc.ops_per_client = 12;
    sc.warmup_ops = 2;
    sc.inter_op_delay = 50 * MS;
    sc.settle = 1_000 * MS;
    if seed % 2 == 1 {
        sc.quorum.bounds.max_int = 256;
        sc.quorum.bounds.max_inc = 64;
    }
    for s in 0..5 {
        let mut kinds = vec![
            FaultKind::CorruptStore,
            FaultKind::CorruptChannel,
            FaultKind::CorruptResetState,
            FaultKind::CorruptIncarnation,
        ];
        kinds.shuffle(&mut rng);
        for kind in kinds {
            sc.faults.push(FaultSpec { at: 0, kind, target: NodeRef::Server(s) });
        }
    }
    for c in 0..3 {
        sc.faults.push(FaultSpec { at: 0, kind: FaultKind::CorruptChannel, target: NodeRef::Client(c) });
    }
    sc
}

fn selfstab() -> Finding {
    let results: Vec<(Option<String>, bool)> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let sc = selfstab_config(seed);
            let r = run(&sc);
            let from = r.metrics.barrier_at.unwrap_or(Micros::MAX).max(50 * sc.gossip_period);
            let ops = r.history.check_ops(from);
            let reset = !r.metrics.resets.is_empty();
            let why = if !r.finished {
                "run did not finish".to_string()
            } else if !matches!(check(&ops, RegState::Unknown, &Limits::default()), Ok(v) if v.is_ok()) {
                format!("{} operations after the window are not linearizable", ops.len())
            } else if !r.metrics.final_reset_idle.iter().all(|&b| b) {
                "reset state did not return to idle".into()
            } else {
                return (None, reset);
            };
            (Some(format!("seed {seed}: {why}")), reset)
        })
        .collect();
    let failures: Vec<&String> = results.iter().filter_map(|r| r.0.as_ref()).collect();
    let resets = results.iter().filter(|r| r.1).count();
    match failures.first() {
        None => Ok(format!("200/200 trials converged, {resets} through a global reset")),
        Some(f) => Err(format!("{} failures; {f}", failures.len())),
    }
}

fn reincarnation() -> Finding {
    let results: Vec<(u64, SimResult)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sc = ScenarioConfig::new(Variant::Casss, 5, 1, 3);
            sc.seed = seed;
            sc.ops_per_client = 20;
            sc.inter_op_delay = 50 * MS;
            sc.inc_period = 200 * MS;
            let c = rng.gen_range(0..3);
            let mut at = rng.gen_range(300 * MS..800 * MS);
            for _ in 0..2 {
                let back = at + rng.gen_range(50 * MS..300 * MS);
                sc.faults.push(FaultSpec { at, kind: FaultKind::Crash, target: NodeRef::Client(c) });
                sc.faults.push(FaultSpec { at: back, kind: FaultKind::Restart, target: NodeRef::Client(c) });
                sc.faults.push(FaultSpec { at: back + 5 * MS, kind: FaultKind::ReplayToClient, target: NodeRef::Client(c) });
                at = back + rng.gen_range(800 * MS..1_500 * MS);
            }
            (seed, run(&sc))
        })
        .collect();
    let mut replayed = 0;
    for (seed, r) in &results {
        let m = &r.metrics;
        replayed += m.replayed;
        if m.stale_accepts > 0 {
            return Err(format!("seed {seed}: {} pre-crash responses accepted", m.stale_accepts));
        }
        let mut per_client: BTreeMap<usize, Vec<(u32, u64)>> = BTreeMap::new();
        for &(c, life, inc) in &m.incarnations {
            per_client.entry(c).or_default().push((life, inc));
        }
        for (c, incs) in &per_client {
            let lives: Vec<u64> = incs.iter().map(|x| x.1).collect();
            if lives.windows(2).any(|w| w[1] <= w[0]) {
                return Err(format!("seed {seed}: client {c} incarnations {lives:?} not strictly increasing"));
            }
        }
        if per_client.values().map(|v| v.len()).max() < Some(3) {
            return Err(format!("seed {seed}: no client went through three lives"));
        }
        if !lin_ok(r) {
            return Err(format!("seed {seed}: history not linearizable"));
        }
    }
    if replayed == 0 {
        return Err("no responses were replayed".into());
    }
    Ok(format!("100/100 trials, {replayed} stale responses replayed, none accepted"))
}

fn codec() -> Finding {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..200 {
        let n = rng.gen_range(1..=32);
        let k = rng.gen_range(1..=n);
        let len = rng.gen_range(1..=4096);
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let codec = Codec::new(n, k).map_err(|e| e.to_string())?;
        let els = codec.encode(&data).map_err(|e| e.to_string())?;
        let want = len / k + usize::from(len % k != 0);
        if els.len() != n || els.iter().any(|e| e.bytes.len() != want) || element_len(len, k) != want {
            return Err(format!("case {case}: N={n} k={k} len={len}: element size differs from {want}"));
        }
        let mut pick = els.clone();
        pick.shuffle(&mut rng);
        pick.truncate(k);
        if codec.decode(&pick).map_err(|e| e.to_string())? != data {
            return Err(format!("case {case}: N={n} k={k} round trip failed"));
        }
        if k > 1 && codec.decode(&pick[..k - 1]).is_ok() {
            return Err(format!("case {case}: decoded from k-1 elements"));
        }
    }
    let mut subsets = 0u64;
    for n in 1..=8usize {
        for k in 1..=n {
            let len = rng.gen_range(1..=300);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let codec = Codec::new(n, k).map_err(|e| e.to_string())?;
            let els = codec.encode(&data).map_err(|e| e.to_string())?;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let pick: Vec<_> = els.iter().filter(|e| mask >> e.index & 1 == 1).cloned().collect();
                if codec.decode(&pick).map_err(|e| e.to_string())? != data {
                    return Err(format!("N={n} k={k} subset {mask:b} failed"));
                }
                subsets += 1;
            }
        }
    }
    Ok(format!("200 random cases, {subsets} subsets for N <= 8"))
}

fn determinism() -> Finding {
    let mut seen = Vec::new();
    for v in Variant::ALL {
        let sc = soak_config(v, 42);
        let first = run(&sc).hash();
        let same = (0..9).map(|_| run(&sc).hash()).filter(|h| *h == first).count() + 1;
        if same != 10 {
            return Err(format!("{v:?}: {same}/10 identical hashes"));
        }
        let mut other = sc.clone();
        other.seed += 1;
        if run(&other).hash() == first {
            return Err(format!("{v:?}: a different seed gave the same hash"));
        }
        seen.push(format!("{v:?} 10/10"));
    }
    Ok(seen.join(", "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("linearizability soak", soak),
        ("round counts", rounds),
        ("constant overhead", overhead),
        ("coding efficiency", bytes),
        ("storage bound", storage),
        ("global reset", reset),
        ("self-stabilization", selfstab),
        ("reincarnation safety", reincarnation),
        ("codec", codec),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let res = f();
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
