//! Declarative experiment description consumed by the engine.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::channel::ChannelConfig;
use crate::control::{Discretization, Topology};
use crate::error::{Error, Result, Violation};
use crate::ran::{integer_ratio, RanConfig};
use crate::DerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Every packet reaches its receiver the instant it is created.
    Ideal,
    /// Packets go through the BSR / round-robin / CQI pipeline.
    #[default]
    FiveG,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ideal => "ideal",
            Mode::FiveG => "5g",
        }
    }
}

/// Frequency-partitioned control: a central controller regulates the PCC and
/// sends the low-pass part of its command over the RAN; each device adds the
/// high-pass part of a local damping loop with zero reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub cutoff_hz: f64,
    pub local_gain: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 20.0,
            local_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ControlScheme {
    /// Coordinated set-point modulation over the topology.
    #[default]
    Coordinated,
    FrequencyPartition(PartitionConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerSpec {
    /// Modulation gain `m`.
    pub gain: f64,
    /// Prediction horizon of the linear error extrapolation, seconds.
    pub pred_horizon: f64,
    /// Plant time constant, seconds.
    pub tau: f64,
    pub initial_setpoint: f64,
    pub initial_output: f64,
    pub discretization: Discretization,
}

impl Default for DerSpec {
    fn default() -> Self {
        Self {
            gain: 4.0,
            pred_horizon: 1e-4,
            tau: 0.02,
            initial_setpoint: 0.0,
            initial_output: 0.0,
            discretization: Discretization::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Setpoint { ders: Vec<DerId>, value: f64 },
    /// Takes down the links carrying `der`'s state to its listeners; with
    /// `both`, also the links into `der`.
    LinkFail { der: DerId, both: bool },
    LinkRestore { der: DerId, both: bool },
    /// Adds `delta` to the output disturbance of each listed device.
    Disturbance { ders: Vec<DerId>, delta: f64 },
}

impl EventKind {
    pub fn ders(&self) -> Vec<DerId> {
        match self {
            EventKind::Setpoint { ders, .. } | EventKind::Disturbance { ders, .. } => ders.clone(),
            EventKind::LinkFail { der, .. } | EventKind::LinkRestore { der, .. } => alloc::vec![*der],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    pub mode: Mode,
    pub sample_period: f64,
    pub substeps_per_tti: u32,
    pub ran: RanConfig,
    pub channel: ChannelConfig,
    pub control: ControlScheme,
    pub ders: Vec<DerSpec>,
    pub topology: Topology,
    pub events: Vec<Event>,
}

impl Scenario {
    /// `n` identical devices, all-to-all coordination, reference radio
    /// parameters, no events.
    pub fn coordinated(name: impl Into<String>, n: usize, duration: f64) -> Self {
        Self {
            name: name.into(),
            duration,
            seed: 1,
            mode: Mode::FiveG,
            sample_period: 1e-3,
            substeps_per_tti: 20,
            ran: RanConfig::default(),
            channel: ChannelConfig::default(),
            control: ControlScheme::Coordinated,
            ders: alloc::vec![DerSpec::default(); n],
            topology: Topology::all_to_all(n),
            events: Vec::new(),
        }
    }

    pub fn n_ders(&self) -> usize {
        self.ders.len()
    }

    pub fn total_ttis(&self) -> u64 {
        integer_ratio(self.duration, self.ran.tti).unwrap_or(0)
    }

    /// TTI index at which an event fires.
    pub fn event_tti(&self, event: &Event) -> u64 {
        libm::round(event.time / self.ran.tti) as u64
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = self.ran.validate();
        out.extend(self.channel.validate());
        let tti_ok = self.ran.tti > 0.0 && self.ran.tti.is_finite();

        if !(self.duration > 0.0) {
            out.push(Violation::new("duration_s", format!("must be > 0, got {}", self.duration)));
        } else if tti_ok && integer_ratio(self.duration, self.ran.tti).is_none() {
            out.push(Violation::new(
                "duration_s",
                format!(
                    "duration {} s must be a whole number of TTIs ({} s)",
                    self.duration, self.ran.tti
                ),
            ));
        }
        if self.substeps_per_tti == 0 {
            out.push(Violation::new("substeps_per_tti", "must be at least 1"));
        }
        if tti_ok && integer_ratio(self.sample_period, self.ran.tti).is_none() {
            out.push(Violation::new(
                "sample_period_s",
                format!(
                    "sample period {} s must be a positive whole number of TTIs ({} s)",
                    self.sample_period, self.ran.tti
                ),
            ));
        }
        if self.ders.is_empty() {
            out.push(Violation::new("der", "at least one device is required"));
        }
        let substep = self.ran.tti / f64::from(self.substeps_per_tti.max(1));
        for (i, d) in self.ders.iter().enumerate() {
            let field = |name: &str| format!("der[{}].{name}", i + 1);
            if !(d.tau > 0.0) {
                out.push(Violation::new(field("tau_s"), format!("must be > 0, got {}", d.tau)));
            } else if d.discretization == Discretization::Explicit && substep > d.tau / 2.0 {
                out.push(Violation::new(
                    field("discretization"),
                    format!(
                        "explicit plant step {substep} s exceeds tau/2 = {} s",
                        d.tau / 2.0
                    ),
                ));
            }
            if !(d.pred_horizon >= 0.0) {
                out.push(Violation::new(
                    field("pred_horizon_s"),
                    format!("must be >= 0, got {}", d.pred_horizon),
                ));
            }
            if !d.gain.is_finite() {
                out.push(Violation::new(field("gain"), "must be finite"));
            }
        }
        if self.topology.len() != self.ders.len() {
            out.push(Violation::new(
                "topology",
                format!(
                    "topology has {} devices, scenario has {}",
                    self.topology.len(),
                    self.ders.len()
                ),
            ));
        }
        if let ControlScheme::FrequencyPartition(p) = self.control {
            if !(p.cutoff_hz > 0.0) {
                out.push(Violation::new(
                    "control.cutoff_hz",
                    format!("must be > 0, got {}", p.cutoff_hz),
                ));
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            let field = |name: &str| format!("event[{}].{name}", i + 1);
            if ev.time < prev {
                out.push(Violation::new(
                    field("t_s"),
                    format!("events must be sorted by time ({} after {prev})", ev.time),
                ));
            }
            prev = ev.time;
            if !(ev.time >= 0.0) || ev.time >= self.duration {
                out.push(Violation::new(
                    field("t_s"),
                    format!("time {} outside [0, duration {})", ev.time, self.duration),
                ));
            } else if tti_ok && ev.time > 0.0 && integer_ratio(ev.time, self.ran.tti).is_none() {
                out.push(Violation::new(
                    field("t_s"),
                    format!("time {} is not on a TTI boundary ({} s)", ev.time, self.ran.tti),
                ));
            }
            let ders = ev.kind.ders();
            if ders.is_empty() {
                out.push(Violation::new(field("ders"), "event names no device"));
            }
            for d in ders {
                if d.0 >= self.ders.len() {
                    out.push(Violation::new(
                        field("ders"),
                        format!("unknown device {} (scenario has {})", d.number(), self.ders.len()),
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_coordinated_is_valid() {
        assert_eq!(Scenario::coordinated("x", 3, 1.0).violations(), []);
    }

    #[test]
    fn collects_every_violation() {
        let mut s = Scenario::coordinated("x", 3, 1.0);
        s.ran.bsr_period = 2.5e-3;
        s.sample_period = 1.5e-3;
        s.ders[1].tau = 0.0;
        s.events.push(Event {
            time: 0.5,
            kind: EventKind::Setpoint {
                ders: alloc::vec![DerId(7)],
                value: 1.0,
            },
        });
        s.events.push(Event {
            time: 0.2,
            kind: EventKind::LinkFail {
                der: DerId(0),
                both: false,
            },
        });
        let fields: Vec<String> = s.violations().into_iter().map(|v| v.field).collect();
        for f in ["ran.bsr_period_s", "sample_period_s", "der[2].tau_s", "event[1].ders", "event[2].t_s"] {
            assert!(fields.iter().any(|x| x == f), "missing {f} in {fields:?}");
        }
        assert!(matches!(s.validate(), Err(Error::Validation(v)) if v.len() == 5));
    }

    #[test]
    fn explicit_discretization_needs_small_substeps() {
        let mut s = Scenario::coordinated("x", 1, 1.0);
        s.ders[0].discretization = Discretization::Explicit;
        s.ders[0].tau = 5e-5;
        assert!(s.violations().iter().any(|v| v.field == "der[1].discretization"));
    }

    #[test]
    fn events_off_tti_grid_rejected() {
        let mut s = Scenario::coordinated("x", 2, 1.0);
        s.events.push(Event {
            time: 0.0005,
            kind: EventKind::Disturbance {
                ders: alloc::vec![DerId(0)],
                delta: 0.1,
            },
        });
        assert_eq!(s.violations().len(), 1);
    }
}
