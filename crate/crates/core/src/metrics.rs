//! Step-response figures computed on sampled traces: overshoot, settling
//! time and a boundedness/settling stability flag.
//!
//! All measures work on the raw samples inside the step window
//! `[t0, t_end)`; there is no interpolation between samples.

use alloc::format;

use crate::error::{Error, Result};

/// Default settling band, as a fraction of the step size.
pub const DEFAULT_BAND: f64 = 0.02;

/// Slack when comparing sample times against window edges.
pub const TIME_EPS: f64 = 1e-9;

/// Traces that leave `10 x |step|` around the final value are unstable.
pub const STABILITY_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub t0: f64,
    pub y_init: f64,
    pub y_final: f64,
    pub band: f64,
    /// End of the window (exclusive); `None` runs to the end of the trace.
    pub t_end: Option<f64>,
}

impl StepSpec {
    pub fn new(t0: f64, y_init: f64, y_final: f64) -> Self {
        Self {
            t0,
            y_init,
            y_final,
            band: DEFAULT_BAND,
            t_end: None,
        }
    }

    pub fn with_band(self, band: f64) -> Self {
        Self { band, ..self }
    }

    pub fn until(self, t_end: f64) -> Self {
        Self {
            t_end: Some(t_end),
            ..self
        }
    }

    pub fn step_size(&self) -> f64 {
        libm::fabs(self.y_final - self.y_init)
    }

    pub fn validate(&self) -> Result<()> {
        if self.y_final == self.y_init || !self.step_size().is_finite() {
            return Err(Error::Input(format!(
                "step needs y_final != y_init (got {} -> {})",
                self.y_init, self.y_final
            )));
        }
        if !(self.band > 0.0 && self.band <= 0.2) {
            return Err(Error::Input(format!("band must be in (0, 0.2], got {}", self.band)));
        }
        if let Some(end) = self.t_end {
            if !(end > self.t0) {
                return Err(Error::Input(format!("window end {end} not after t0 {}", self.t0)));
            }
        }
        Ok(())
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.t0 - TIME_EPS && self.t_end.is_none_or(|end| t < end - TIME_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Settling {
    Settled(f64),
    NotSettled,
}

impl Settling {
    pub fn seconds(self) -> Option<f64> {
        match self {
            Settling::Settled(t) => Some(t),
            Settling::NotSettled => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub overshoot_pct: f64,
    pub settling: Settling,
    pub peak_time: f64,
    pub stable: bool,
}

/// The samples of `trace` (time-ordered `(t, y)` pairs) inside the window.
pub fn window<'a>(trace: &'a [(f64, f64)], spec: &StepSpec) -> Result<&'a [(f64, f64)]> {
    spec.validate()?;
    let start = trace.iter().position(|&(t, _)| spec.contains(t));
    let Some(start) = start else {
        return Err(Error::Input(format!(
            "trace has no samples in the step window starting at t0 = {}",
            spec.t0
        )));
    };
    let len = trace[start..].iter().take_while(|&&(t, _)| spec.contains(t)).count();
    Ok(&trace[start..start + len])
}

fn direction(spec: &StepSpec) -> f64 {
    if spec.y_final > spec.y_init {
        1.0
    } else {
        -1.0
    }
}

/// Largest excursion in the step direction and the time it first occurs.
fn peak(samples: &[(f64, f64)], spec: &StepSpec) -> (f64, f64) {
    let dir = direction(spec);
    let mut best = (f64::NEG_INFINITY, samples[0].0);
    for &(t, y) in samples {
        let excursion = dir * (y - spec.y_init);
        if excursion > best.0 {
            best = (excursion, t);
        }
    }
    best
}

pub fn overshoot(trace: &[(f64, f64)], spec: &StepSpec) -> Result<f64> {
    let samples = window(trace, spec)?;
    let size = spec.step_size();
    let (excursion, _) = peak(samples, spec);
    Ok(100.0 * (excursion - size).max(0.0) / size)
}

/// Smallest offset from `t0` after which every sample stays within
/// `band x |step|` of the final value.
pub fn settling_time(trace: &[(f64, f64)], spec: &StepSpec) -> Result<Settling> {
    let samples = window(trace, spec)?;
    let tol = spec.band * spec.step_size();
    let last_out = samples
        .iter()
        .rposition(|&(_, y)| libm::fabs(y - spec.y_final) > tol);
    Ok(match last_out {
        None => Settling::Settled(0.0),
        Some(i) if i + 1 == samples.len() => Settling::NotSettled,
        Some(i) => Settling::Settled(samples[i + 1].0 - spec.t0),
    })
}

pub fn stability_flag(trace: &[(f64, f64)], spec: &StepSpec) -> Result<bool> {
    let settled = matches!(settling_time(trace, spec)?, Settling::Settled(_));
    let bound = STABILITY_BOUND * spec.step_size();
    let bounded = window(trace, spec)?
        .iter()
        .all(|&(_, y)| libm::fabs(y - spec.y_final) <= bound);
    Ok(settled && bounded)
}

pub fn analyze(trace: &[(f64, f64)], spec: &StepSpec) -> Result<MetricsReport> {
    let samples = window(trace, spec)?;
    let (_, peak_time) = peak(samples, spec);
    Ok(MetricsReport {
        overshoot_pct: overshoot(trace, spec)?,
        settling: settling_time(trace, spec)?,
        peak_time,
        stable: stability_flag(trace, spec)?,
    })
}
