//! Step specs on the command line, metrics reports and ideal-vs-5G tables.

use std::fmt::Write as _;

use grid5g_core::metrics::{analyze, MetricsReport, Settling, StepSpec};

use crate::error::{CliError, Result};
use crate::trace::{fmt_sig9, Trace};

/// Parses `t0:y0:y1` or `t0:y0:y1:t_end`. Values may be fractions (`1/3`).
pub fn parse_step(text: &str, band: f64) -> Result<StepSpec> {
    let bad = |m: &str| CliError::Usage(format!("bad step spec {text:?}: {m} (expected t0:y0:y1[:t_end])"));
    let parts: Vec<&str> = text.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad("wrong number of fields"));
    }
    let nums = parts
        .iter()
        .map(|p| parse_number(p).ok_or_else(|| bad(&format!("{p:?} is not a number"))))
        .collect::<Result<Vec<f64>>>()?;
    let mut spec = StepSpec::new(nums[0], nums[1], nums[2]).with_band(band);
    if let Some(&t_end) = nums.get(3) {
        spec = spec.until(t_end);
    }
    spec.validate().map_err(|e| bad(&e.to_string()))?;
    Ok(spec)
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.parse().ok().filter(|v: &f64| v.is_finite()),
    }
}

pub fn step_label(spec: &StepSpec) -> String {
    let mut s = format!("{}:{}:{}", fmt_sig9(spec.t0), fmt_sig9(spec.y_init), fmt_sig9(spec.y_final));
    if let Some(t) = spec.t_end {
        let _ = write!(s, ":{}", fmt_sig9(t));
    }
    s
}

pub fn measure(trace: &Trace, column: &str, specs: &[StepSpec]) -> Result<Vec<MetricsReport>> {
    let series = trace.column(column)?;
    let end = trace.end_time().unwrap_or(f64::NEG_INFINITY);
    specs
        .iter()
        .map(|spec| {
            if spec.t0 > end {
                return Err(CliError::Usage(format!(
                    "step at t0 = {} s is beyond the end of the trace ({} s)",
                    spec.t0, end
                )));
            }
            analyze(&series, spec).map_err(CliError::from)
        })
        .collect()
}

/// Key-value text, one `[[step]]` block per spec.
pub fn metrics_text(
    trace: &Trace,
    column: &str,
    band: f64,
    specs: &[StepSpec],
    reports: &[MetricsReport],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "band = {}", fmt_sig9(band));
    let _ = writeln!(out, "column = \"{column}\"");
    if let Some(p) = trace.sample_period() {
        let _ = writeln!(out, "sample_period_s = {}", fmt_sig9(p));
    }
    for (spec, r) in specs.iter().zip(reports) {
        let _ = writeln!(out, "\n[[step]]");
        let _ = writeln!(out, "spec = \"{}\"", step_label(spec));
        let _ = writeln!(out, "overshoot_pct = {}", fmt_sig9(r.overshoot_pct));
        match r.settling {
            Settling::Settled(t) => {
                let _ = writeln!(out, "settling_time_s = {}", fmt_sig9(t));
            }
            Settling::NotSettled => {
                let _ = writeln!(out, "settling_time_s = \"NOT_SETTLED\"");
            }
        }
        let _ = writeln!(out, "peak_time_s = {}", fmt_sig9(r.peak_time));
        let _ = writeln!(out, "stable = {}", r.stable);
    }
    out
}

/// Checks that two traces cover the same time grid.
pub fn check_comparable(ideal: &Trace, five_g: &Trace) -> Result<()> {
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0),
        (None, None) => true,
        _ => false,
    };
    if !close(ideal.sample_period(), five_g.sample_period()) {
        return Err(CliError::Usage(format!(
            "traces differ in sample period ({:?} s vs {:?} s)",
            ideal.sample_period(),
            five_g.sample_period()
        )));
    }
    if !close(ideal.end_time(), five_g.end_time()) {
        return Err(CliError::Usage(format!(
            "traces differ in duration (last sample {:?} s vs {:?} s)",
            ideal.end_time(),
            five_g.end_time()
        )));
    }
    Ok(())
}

fn ms(s: Settling) -> String {
    match s {
        Settling::Settled(t) => format!("{:.3}", t * 1e3),
        Settling::NotSettled => "NOT_SETTLED".into(),
    }
}

fn signed(v: f64) -> String {
    if v == 0.0 {
        format!("{:.3}", 0.0)
    } else {
        format!("{v:+.3}")
    }
}

pub fn compare_table(
    band: f64,
    specs: &[StepSpec],
    ideal: &[MetricsReport],
    five_g: &[MetricsReport],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "band = {}", fmt_sig9(band));
    for (i, spec) in specs.iter().enumerate() {
        let (a, b) = (&ideal[i], &five_g[i]);
        let _ = writeln!(out, "\nstep {} ({})", i + 1, step_label(spec));
        let _ = writeln!(out, "{:<8}{:>16}{:>22}{:>8}", "Case", "Overshoot (%)", "Settling Time (ms)", "Stable");
        for (label, r) in [("Ideal", a), ("5G", b)] {
            let _ = writeln!(
                out,
                "{label:<8}{:>16.3}{:>22}{:>8}",
                r.overshoot_pct,
                ms(r.settling),
                r.stable
            );
        }
        let settle_delta = match (a.settling, b.settling) {
            (Settling::Settled(x), Settling::Settled(y)) => signed((y - x) * 1e3),
            _ => "n/a".into(),
        };
        let _ = writeln!(
            out,
            "{:<8}{:>16}{:>22}{:>8}",
            "Delta",
            signed(b.overshoot_pct - a.overshoot_pct),
            settle_delta,
            ""
        );
    }
    out
}
