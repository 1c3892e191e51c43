//! Acceptance suite. Run with `--nocapture` to see one line per criterion.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::thread;
use std::time::{Duration, Instant};

use grid5g::bridge::{serve, ReferencePeer};
use grid5g::trace::write_csv;
use grid5g::{simulate, Source};
use grid5g_core::control::{frequency_partition, FreqPartition};
use grid5g_core::engine::{Engine, TraceRecord};
use grid5g_core::metrics::{analyze, overshoot, settling_time, MetricsReport, Settling, StepSpec, TIME_EPS};
use grid5g_core::ran::{
    aggregate_throughput, schedule_round_robin, symbol_time, BufferStatus, RanConfig, RoundRobinState,
};
use grid5g_core::scenario::{Event, EventKind, Mode, Scenario};
use grid5g_core::DerId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn preset(name: &str, mode: Mode, seed: u64) -> Scenario {
    let mut s = Source::Preset(name.into()).load().unwrap().scenario;
    s.mode = mode;
    s.seed = seed;
    s
}

fn pcc(records: &[TraceRecord]) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.t, r.pcc)).collect()
}

fn first_step() -> StepSpec {
    StepSpec::new(0.5, 0.0, 1.0 / 3.0).until(1.0)
}

fn staggered_steps() -> [StepSpec; 3] {
    [
        first_step(),
        StepSpec::new(1.0, 1.0 / 3.0, 2.0 / 3.0).until(1.5),
        StepSpec::new(1.5, 2.0 / 3.0, 1.0),
    ]
}

fn throughput() -> Outcome {
    let cfg = RanConfig::default();
    // Per carrier: 2 layers * 8 bits * 0.8 * 948/1024 * 12 subcarriers
    // * 56000 symbols/s * 0.92 = 7 326 144 bit/s.
    let hand = 2.0 * 7_326_144.0;
    let got = aggregate_throughput(&cfg, &[8, 8], 1).map_err(|e| e.to_string())?;
    ensure!((got - hand).abs() <= 1e-6 * hand, "got {got}, expected {hand}");

    let mut checked = 0;
    for mu in 0..=4u8 {
        let base = RanConfig { numerology: mu, ..RanConfig::default() };
        for qm in [2u8, 4, 6, 8] {
            let t = |c: &RanConfig, q: u8| aggregate_throughput(c, &[q, q], 1).unwrap();
            let per_bit = t(&base, qm) / f64::from(qm);
            ensure!(
                (per_bit - t(&base, 2) / 2.0).abs() <= 1e-12 * per_bit,
                "not linear in Qm at mu={mu} qm={qm}"
            );
            let mut prev = f64::INFINITY;
            for oh in [0.0, 0.04, 0.08, 0.14, 0.18, 0.5] {
                let v = t(&RanConfig { overhead: oh, ..base.clone() }, qm);
                ensure!(v < prev, "not decreasing in overhead at mu={mu} qm={qm} oh={oh}");
                prev = v;
            }
            if mu < 4 {
                let next = RanConfig { numerology: mu + 1, ..base.clone() };
                let ts = symbol_time(mu).unwrap();
                ensure!((symbol_time(mu + 1).unwrap() - ts / 2.0).abs() <= 1e-15 * ts, "symbol time at mu={mu}");
                let ratio = t(&next, qm) / t(&base, qm);
                ensure!((ratio - 2.0).abs() <= 1e-12, "mu {mu}->{} ratio {ratio}", mu + 1);
            }
            checked += 1;
        }
    }
    Ok(format!("{got:.6e} bit/s at Qm=8; {checked} (mu, Qm) pairs"))
}

fn fairness() -> Outcome {
    let cfg = RanConfig { total_rbs: 3, rbs_per_der: 1, ..RanConfig::default() };
    let bsrs: Vec<BufferStatus> = (0..4)
        .map(|i| BufferStatus { der: DerId(i), pending_packets: 100, reported_at: 0.0 })
        .collect();
    let mut state = RoundRobinState::default();
    let mut got = [0u32; 4];
    // Brute force: a single pointer walks the ring handing out one RB per step.
    let mut want = [0u32; 4];
    let mut ptr = 0;
    for k in 0..12 {
        let (alloc, next) = schedule_round_robin(&bsrs, &cfg, state, k);
        state = next;
        let mut this_tti = [0u32; 4];
        for (d, g) in &alloc.grants {
            got[d.0] += g;
            this_tti[d.0] = *g;
        }
        let mut oracle = [0u32; 4];
        for _ in 0..3 {
            oracle[ptr] += 1;
            ptr = (ptr + 1) % 4;
        }
        ensure!(this_tti == oracle, "tti {k}: {this_tti:?} vs oracle {oracle:?}");
        for (w, o) in want.iter_mut().zip(oracle) {
            *w += o;
        }
    }
    ensure!(got == [9; 4] && want == [9; 4], "totals {got:?}");
    Ok(format!("RB totals {got:?}"))
}

fn conservation() -> Outcome {
    let mut r = rng(7);
    let (mut with_drops, mut checked_ttis) = (0, 0u64);
    for case in 0..100 {
        let n = r.gen_range(2usize..6);
        let mut s = Scenario::coordinated("random", n, 0.08);
        s.mode = Mode::FiveG;
        s.seed = r.gen();
        // Odd cases are congested, even ones lightly loaded.
        s.ran.total_rbs = r.gen_range(1..4);
        s.ran.packet_size = if case % 2 == 1 { r.gen_range(150..3000) } else { r.gen_range(100..400) };
        s.ran.queue_cap = r.gen_range(2..60);
        s.ran.bsr_period = f64::from(r.gen_range(1u32..4)) * 1e-3;
        s.events.push(Event {
            time: 0.01,
            kind: EventKind::Setpoint { ders: vec![DerId(r.gen_range(0..n))], value: 1.0 },
        });
        let cap = s.ran.queue_cap;
        let mut e = Engine::new(s).map_err(|e| e.to_string())?;
        let mut last: BTreeMap<DerId, u64> = BTreeMap::new();
        while !e.is_finished() {
            let out = e.step_tti().map_err(|e| e.to_string())?;
            checked_ttis += 1;
            for p in &out.deliveries {
                if let Some(prev) = last.insert(p.source, p.id) {
                    ensure!(p.id > prev, "case {case}: {} delivered out of order", p.source);
                }
            }
            for d in e.ders() {
                let q = &d.queue;
                ensure!(
                    q.generated == q.delivered + q.len() as u64 + q.dropped,
                    "case {case} tti {}: {} generated {} != {} + {} + {}",
                    out.tti_index, d.id, q.generated, q.delivered, q.len(), q.dropped
                );
            }
        }
        let dropped: u64 = e.ders().iter().map(|d| d.queue.dropped).sum();
        let hit_cap = e.ders().iter().any(|d| d.queue.peak > cap);
        if !hit_cap {
            ensure!(dropped == 0, "case {case}: {dropped} drops without reaching the cap");
        }
        with_drops += usize::from(dropped > 0);
    }
    Ok(format!("100 scenarios, {checked_ttis} TTIs, {with_drops} with drops, {} without", 100 - with_drops))
}

fn directional() -> Outcome {
    let mut strict = 0;
    let mut summary = Vec::new();
    for seed in 1..=10 {
        let ideal = analyze(&pcc(&simulate(preset("cspm_staggered", Mode::Ideal, seed)).unwrap().records), &first_step())
            .map_err(|e| e.to_string())?;
        let five = analyze(&pcc(&simulate(preset("cspm_staggered", Mode::FiveG, seed)).unwrap().records), &first_step())
            .map_err(|e| e.to_string())?;
        let (si, s5) = match (ideal.settling, five.settling) {
            (Settling::Settled(a), Settling::Settled(b)) => (a, b),
            other => return Err(format!("seed {seed}: not settled {other:?}")),
        };
        ensure!(ideal.stable && five.stable, "seed {seed}: unstable");
        ensure!(five.overshoot_pct >= ideal.overshoot_pct, "seed {seed}: overshoot {five:?} < {ideal:?}");
        ensure!(s5 >= si, "seed {seed}: settling {s5} < {si}");
        strict += usize::from(five.overshoot_pct > ideal.overshoot_pct);
        if seed == 1 {
            summary.push(format!(
                "ideal {:.3}%/{:.0} ms, 5G {:.3}%/{:.0} ms",
                ideal.overshoot_pct,
                si * 1e3,
                five.overshoot_pct,
                s5 * 1e3
            ));
        }
    }
    ensure!(strict >= 8, "5G overshoot strictly greater in only {strict}/10 seeds");
    Ok(format!("{}; strictly greater in {strict}/10 seeds", summary.join("")))
}

fn comm_failure() -> Outcome {
    let failed = pcc(&simulate(preset("cspm_comm_failure", Mode::FiveG, 1)).unwrap().records);
    let healthy = pcc(&simulate(preset("cspm_staggered", Mode::FiveG, 1)).unwrap().records);
    let reports: Vec<MetricsReport> = staggered_steps()
        .iter()
        .map(|s| analyze(&failed, s))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (i, r) in reports.iter().enumerate() {
        ensure!(r.stable, "step {} unstable: {r:?}", i + 1);
        ensure!(r.settling.seconds().is_some(), "step {} not settled", i + 1);
    }
    let base = analyze(&healthy, &first_step()).map_err(|e| e.to_string())?;
    ensure!(
        reports[0].overshoot_pct >= base.overshoot_pct,
        "overshoot {} below all-links-up {}",
        reports[0].overshoot_pct,
        base.overshoot_pct
    );
    Ok(format!(
        "overshoot {:.3}% vs {:.3}% with all links up; settled in {:?} ms",
        reports[0].overshoot_pct,
        base.overshoot_pct,
        reports.iter().map(|r| (r.settling.seconds().unwrap() * 1e3).round()).collect::<Vec<_>>()
    ))
}

/// Checks that every neighbour value a device holds equals the sender's
/// predictive error from exactly `lag` TTIs earlier in the same run.
fn neighbor_skew(mode: Mode, lag: u64) -> Result<usize, String> {
    let mut s = preset("cspm_staggered", mode, 1);
    s.ran.infinite_capacity = true;
    let mut e = Engine::new(s).map_err(|e| e.to_string())?;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut compared = 0;
    while !e.is_finished() {
        let k = e.step_tti().map_err(|e| e.to_string())?.tti_index;
        history.push(e.ders().iter().map(|d| d.controller.last_pred).collect());
        for (i, d) in e.ders().iter().enumerate() {
            for (j, r) in &d.controller.neighbor_errors {
                let src = k.checked_sub(lag).ok_or_else(|| format!("value at tti {k} before any send"))?;
                let want = history[src as usize][j.0];
                ensure!(r.value == want, "tti {k}: DER {} holds {} from {}, sender had {want}", i + 1, r.value, j);
                compared += 1;
            }
        }
    }
    Ok(compared)
}

fn consistency() -> Outcome {
    let ideal = neighbor_skew(Mode::Ideal, 0)?;
    let five = neighbor_skew(Mode::FiveG, 1)?;
    ensure!(five > 0, "no neighbour values delivered");
    Ok(format!("{five} 5G values one TTI behind, {ideal} ideal values current"))
}

fn partition() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    let mut fp = FreqPartition::new(30.0);
    for i in 0..100_000 {
        if i % 1000 == 0 {
            fp = FreqPartition::new(r.gen_range(0.5..500.0));
        }
        let dt = [5e-5, 1e-4, 1e-3][r.gen_range(0..3)];
        let x: f64 = r.gen_range(-10.0..10.0);
        let (low, high) = frequency_partition(x, &mut fp, dt).map_err(|e| e.to_string())?;
        let err = (low + high - x).abs() / x.abs().max(1.0);
        worst = worst.max(err);
    }
    ensure!(worst <= 1e-12, "worst relative residual {worst:e}");
    let mut dc_worst = 0.0f64;
    for _ in 0..50 {
        let mut fp = FreqPartition::new(r.gen_range(1.0..200.0));
        let level: f64 = r.gen_range(-5.0..5.0);
        let dt = 1e-4;
        let steps = (10.0 * fp.time_constant() / dt).ceil() as usize;
        let mut high = 0.0;
        for _ in 0..steps {
            high = frequency_partition(level, &mut fp, dt).unwrap().1;
        }
        dc_worst = dc_worst.max(high.abs() / level.abs().max(1.0));
    }
    ensure!(dc_worst < 1e-2, "DC high part {dc_worst:e} after 10 time constants");
    Ok(format!("residual <= {worst:.1e}; DC high part <= {dc_worst:.1e}"))
}

fn brute_force(trace: &[(f64, f64)], spec: &StepSpec) -> (f64, Settling) {
    let inside: Vec<(f64, f64)> = trace
        .iter()
        .copied()
        .filter(|&(t, _)| t >= spec.t0 - TIME_EPS && spec.t_end.is_none_or(|e| t < e - TIME_EPS))
        .collect();
    let size = (spec.y_final - spec.y_init).abs();
    let dir = if spec.y_final > spec.y_init { 1.0 } else { -1.0 };
    let peak = inside.iter().map(|&(_, y)| dir * (y - spec.y_init)).fold(f64::NEG_INFINITY, f64::max);
    let os = 100.0 * (peak - size).max(0.0) / size;
    let tol = spec.band * size;
    let settled = (0..inside.len()).find(|&i| inside[i..].iter().all(|&(_, y)| (y - spec.y_final).abs() <= tol));
    let st = match settled {
        Some(0) => Settling::Settled(0.0),
        Some(i) => Settling::Settled(inside[i].0 - spec.t0),
        None => Settling::NotSettled,
    };
    (os, st)
}

fn metrics_oracle() -> Outcome {
    let mut r = rng(23);
    let mut not_settled = 0;
    for case in 0..1000 {
        let len = r.gen_range(5..400);
        let y0: f64 = r.gen_range(-2.0..2.0);
        let size = [-3.0, -1.0, 0.25, 1.0, 2.5][r.gen_range(0..5)];
        let dt = [1e-4, 1e-3, 2e-3][r.gen_range(0..3)];
        // Damped oscillation plus noise; sometimes a persistent ripple.
        let zeta: f64 = r.gen_range(0.05..1.2);
        let ripple = if r.gen_bool(0.2) { r.gen_range(0.0..0.1) } else { 0.0 };
        let trace: Vec<(f64, f64)> = (0..len)
            .map(|k| {
                let x = k as f64 * 0.05;
                let shape = 1.0 - (-zeta * x).exp() * (x * 3.0).cos() + ripple * (x * 7.0).sin() + r.gen_range(-0.01..0.01);
                (k as f64 * dt, y0 + size * shape)
            })
            .collect();
        let start = r.gen_range(0..5);
        let mut spec = StepSpec::new(start as f64 * dt, y0, y0 + size).with_band(r.gen_range(0.005..0.1));
        if r.gen_bool(0.3) {
            spec = spec.until(r.gen_range(start + 1..len + 10) as f64 * dt);
        }
        let (os, st) = brute_force(&trace, &spec);
        let got_os = overshoot(&trace, &spec).map_err(|e| e.to_string())?;
        let got_st = settling_time(&trace, &spec).map_err(|e| e.to_string())?;
        ensure!(got_os == os, "case {case}: overshoot {got_os} vs oracle {os}");
        ensure!(got_st == st, "case {case}: settling {got_st:?} vs oracle {st:?}");
        not_settled += usize::from(st == Settling::NotSettled);
    }
    Ok(format!("1000 traces exact, {not_settled} never settle"))
}

fn csv_bytes(name: &str, mode: Mode, seed: u64) -> Vec<u8> {
    let out = simulate(preset(name, mode, seed)).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, out.scenario.n_ders(), out.scenario.ran.aggregated_carriers, &out.records).unwrap();
    buf
}

fn determinism() -> Outcome {
    let mut bytes = 0;
    for name in grid5g::presets::names() {
        for mode in [Mode::Ideal, Mode::FiveG] {
            let a = csv_bytes(name, mode, 3);
            ensure!(a == csv_bytes(name, mode, 3), "{name} {mode:?} differs between runs");
            bytes += a.len();
        }
    }
    Ok(format!("{bytes} bytes reproduced"))
}

fn bridge_equivalence() -> Outcome {
    let s = preset("cspm_staggered", Mode::FiveG, 1);
    let direct = simulate(s.clone()).unwrap().records;
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = listener.local_addr().unwrap();
    let peer_s = s.clone();
    let peer = thread::spawn(move || {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_nodelay(true).unwrap();
        ReferencePeer::new(&peer_s).run(BufReader::new(stream.try_clone().unwrap()), stream)
    });
    let (stream, _) = listener.accept().map_err(|e| e.to_string())?;
    stream.set_nodelay(true).unwrap();
    let mut engine = Engine::new(s.clone()).unwrap();
    let session = serve(&mut engine, BufReader::new(stream.try_clone().unwrap()), stream);
    session.result.map_err(|e| e.to_string())?;
    peer.join().unwrap().map_err(|e| e.to_string())?;
    ensure!(session.records.len() == direct.len(), "{} vs {} records", session.records.len(), direct.len());
    let gap = session
        .records
        .iter()
        .zip(&direct)
        .flat_map(|(a, b)| a.ders.iter().zip(&b.ders).map(|(p, q)| (p.x - q.x).abs()))
        .fold(0.0f64, f64::max);
    ensure!(gap <= 1e-6, "max |dx| {gap:e}");

    for (script, code) in [("HELLO 2 3\n", 4), ("HELLO 1 3\nSTATE 1 0 0 0\n", 4)] {
        let mut engine = Engine::new(s.clone()).unwrap();
        let err = serve(&mut engine, script.as_bytes(), std::io::sink())
            .result
            .err()
            .ok_or("violation accepted")?;
        ensure!(err.exit_code() == code, "{script:?} exit {} ({err})", err.exit_code());
    }
    Ok(format!("max |dx| {gap:.1e}; bad version and bad order exit 4"))
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 10] = [
        ("throughput formula", throughput, Duration::from_secs(1)),
        ("scheduler fairness", fairness, Duration::from_secs(1)),
        ("packet conservation and FIFO", conservation, Duration::from_secs(60)),
        ("5G degrades first-step response", directional, Duration::from_secs(30)),
        ("communication failure resilience", comm_failure, Duration::from_secs(10)),
        ("ideal/5G neighbour consistency", consistency, Duration::from_secs(60)),
        ("frequency partition complementarity", partition, Duration::from_secs(60)),
        ("metrics brute-force oracle", metrics_oracle, Duration::from_secs(60)),
        ("determinism", determinism, Duration::from_secs(60)),
        ("bridge equivalence (secondary)", bridge_equivalence, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(msg) if took > limit => Err(format!("{msg}; took {took:.2?}, limit {limit:?}")),
            other => other,
        };
        match result {
            Ok(msg) => println!("PASS  {name}: {msg} ({took:.2?})"),
            Err(msg) => {
                println!("FAIL  {name}: {msg} ({took:.2?})");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
