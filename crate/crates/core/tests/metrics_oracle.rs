use grid5g_core::metrics::{analyze, overshoot, settling_time, Settling, StepSpec, TIME_EPS};
use proptest::prelude::*;

/// Brute-force scan: every sample in the window is a candidate for both the
/// peak and the settling instant.
fn oracle(trace: &[(f64, f64)], spec: &StepSpec) -> (f64, Settling) {
    let inside: Vec<(f64, f64)> = trace
        .iter()
        .copied()
        .filter(|&(t, _)| t >= spec.t0 - TIME_EPS && spec.t_end.is_none_or(|e| t < e - TIME_EPS))
        .collect();
    let size = (spec.y_final - spec.y_init).abs();
    let dir = if spec.y_final > spec.y_init { 1.0 } else { -1.0 };
    let mut peak = f64::NEG_INFINITY;
    for &(_, y) in &inside {
        peak = peak.max(dir * (y - spec.y_init));
    }
    let os = 100.0 * (peak - size).max(0.0) / size;
    let tol = spec.band * size;
    let mut settling = Settling::NotSettled;
    for i in 0..inside.len() {
        if inside[i..].iter().all(|&(_, y)| (y - spec.y_final).abs() <= tol) {
            settling = Settling::Settled(if i == 0 { 0.0 } else { inside[i].0 - spec.t0 });
            break;
        }
    }
    (os, settling)
}

fn trace_strategy() -> impl Strategy<Value = (Vec<(f64, f64)>, StepSpec)> {
    (
        prop::collection::vec(-0.5f64..1.6, 5..300),
        -2.0f64..2.0,
        prop::sample::select(vec![-3.0, -1.0, 0.5, 1.0, 2.5]),
        0usize..5,
        0.001f64..0.2,
        prop::option::of(0usize..400),
    )
        .prop_map(|(shape, y0, size, start, band, end)| {
            let y1 = y0 + size;
            let trace: Vec<(f64, f64)> = shape
                .iter()
                .enumerate()
                .map(|(k, s)| (k as f64 * 1e-3, y0 + s * size))
                .collect();
            let mut spec = StepSpec::new(start as f64 * 1e-3, y0, y1).with_band(band);
            if let Some(e) = end.filter(|&e| e > start) {
                spec = spec.until(e as f64 * 1e-3);
            }
            (trace, spec)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn agrees_with_brute_force((trace, spec) in trace_strategy()) {
        let (os, st) = oracle(&trace, &spec);
        prop_assert_eq!(overshoot(&trace, &spec).unwrap(), os);
        prop_assert_eq!(settling_time(&trace, &spec).unwrap(), st);
    }

    #[test]
    fn scale_invariant((trace, spec) in trace_strategy(), c in prop::sample::select(vec![-4.0, -1.0, 0.5, 2.0, 8.0])) {
        let scaled: Vec<(f64, f64)> = trace.iter().map(|&(t, y)| (t, c * y)).collect();
        let mut sspec = spec;
        sspec.y_init *= c;
        sspec.y_final *= c;
        let a = analyze(&trace, &spec).unwrap();
        let b = analyze(&scaled, &sspec).unwrap();
        prop_assert!((a.overshoot_pct - b.overshoot_pct).abs() <= 1e-9 * a.overshoot_pct.max(1.0));
        prop_assert_eq!(a.settling.seconds().is_some(), b.settling.seconds().is_some());
        if let (Some(x), Some(y)) = (a.settling.seconds(), b.settling.seconds()) {
            // Samples sitting exactly on the band edge may flip under rounding;
            // powers of two scale exactly.
            if c.abs().log2().fract() == 0.0 {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn time_shift_equivariant((trace, spec) in trace_strategy(), shift_ms in 1u32..1000) {
        let d = f64::from(shift_ms) * 0.25;
        let shifted: Vec<(f64, f64)> = trace.iter().map(|&(t, y)| (t + d, y)).collect();
        let mut sspec = spec;
        sspec.t0 += d;
        sspec.t_end = spec.t_end.map(|e| e + d);
        let a = analyze(&trace, &spec).unwrap();
        let b = analyze(&shifted, &sspec).unwrap();
        prop_assert_eq!(a.overshoot_pct, b.overshoot_pct);
        prop_assert!((b.peak_time - a.peak_time - d).abs() < 1e-9);
        match (a.settling, b.settling) {
            (Settling::Settled(x), Settling::Settled(y)) => prop_assert!((x - y).abs() < 1e-9),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn zero_overshoot_iff_no_sample_beyond_final((trace, spec) in trace_strategy()) {
        let os = overshoot(&trace, &spec).unwrap();
        let dir = (spec.y_final - spec.y_init).signum();
        let beyond = trace.iter().filter(|&&(t, _)| t >= spec.t0 - TIME_EPS && spec.t_end.is_none_or(|e| t < e - TIME_EPS))
            .any(|&(_, y)| dir * (y - spec.y_init) > (spec.y_final - spec.y_init).abs());
        prop_assert_eq!(os == 0.0, !beyond);
    }
}

#[test]
fn trace_ending_before_t0_is_an_error() {
    let trace = [(0.0, 0.0), (0.001, 0.5)];
    assert!(analyze(&trace, &StepSpec::new(0.5, 0.0, 1.0)).is_err());
}

#[test]
fn growing_trace_is_unstable() {
    let trace: Vec<(f64, f64)> = (0..200).map(|k| (k as f64 * 1e-3, 1.05f64.powi(k))).collect();
    let r = analyze(&trace, &StepSpec::new(0.0, 0.0, 1.0)).unwrap();
    assert!(!r.stable);
    assert_eq!(r.settling, Settling::NotSettled);
}

#[test]
fn bounded_limit_cycle_never_settles() {
    let trace: Vec<(f64, f64)> = (0..500)
        .map(|k| (k as f64 * 1e-3, 1.0 + 0.1 * (k as f64 * 0.3).sin()))
        .collect();
    let r = analyze(&trace, &StepSpec::new(0.0, 0.0, 1.0)).unwrap();
    assert!(!r.stable);
}
