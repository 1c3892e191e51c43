//! Line protocol for driving the plants from an external simulator.
//!
//! Frames are newline-terminated, space-separated:
//!
//! ```text
//! HELLO <version> <n_ders>
//! STEP <tti_index> <u_1> ... <u_n>     engine -> peer, applied set points
//! STATE <tti_index> <x_1> ... <x_n>    peer -> engine, plant states after the TTI
//! BYE <reason>
//! ```
//!
//! The engine speaks first. Both sides exchange HELLO, then every TTI is one
//! STEP answered by one STATE with the same index, starting at 0 and going
//! up by one. The engine ends the session with `BYE done`. Output
//! disturbances from scenario events are applied on the engine side on top of
//! the reported states.

use std::io::{BufRead, Write};

use grid5g_core::control::PlantState;
use grid5g_core::engine::{Engine, InternalPlants, PlantDriver, TraceRecord};
use grid5g_core::scenario::Scenario;
use grid5g_core::Error as CoreError;

use crate::error::{CliError, Result};
use crate::trace::fmt_sig9;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Hello { version: u32, n_ders: usize },
    Step { tti_index: u64, values: Vec<f64> },
    State { tti_index: u64, values: Vec<f64> },
    Bye { reason: String },
}

impl Frame {
    pub fn encode(&self) -> String {
        let values = |k: &str, i: u64, v: &[f64]| {
            let mut s = format!("{k} {i}");
            for x in v {
                s.push(' ');
                s.push_str(&fmt_sig9(*x));
            }
            s
        };
        match self {
            Frame::Hello { version, n_ders } => format!("HELLO {version} {n_ders}"),
            Frame::Step { tti_index, values: v } => values("STEP", *tti_index, v),
            Frame::State { tti_index, values: v } => values("STATE", *tti_index, v),
            Frame::Bye { reason } => format!("BYE {reason}"),
        }
    }

    pub fn parse(line: &str) -> std::result::Result<Frame, String> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.split(' ');
        let kind = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();
        let int = |s: &str| s.parse::<u64>().map_err(|_| format!("{s:?} is not an index"));
        match kind {
            "HELLO" => match rest.as_slice() {
                [v, n] => Ok(Frame::Hello {
                    version: v.parse().map_err(|_| format!("bad version {v:?}"))?,
                    n_ders: n.parse().map_err(|_| format!("bad device count {n:?}"))?,
                }),
                _ => Err(format!("HELLO takes 2 fields, got {}", rest.len())),
            },
            "STEP" | "STATE" => {
                let (first, values) = rest.split_first().ok_or_else(|| format!("{kind} without index"))?;
                let tti_index = int(first)?;
                let values = values
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| format!("{s:?} is not a finite number"))
                    })
                    .collect::<std::result::Result<Vec<f64>, String>>()?;
                Ok(if kind == "STEP" {
                    Frame::Step { tti_index, values }
                } else {
                    Frame::State { tti_index, values }
                })
            }
            "BYE" => Ok(Frame::Bye {
                reason: rest.join(" "),
            }),
            _ => Err(format!("unknown frame {line:?}")),
        }
    }
}

enum Incoming {
    Frame(Frame),
    Closed,
}

fn read_frame<R: BufRead>(r: &mut R) -> Result<Incoming> {
    let mut line = String::new();
    let n = r
        .read_line(&mut line)
        .map_err(|e| CliError::Runtime(format!("reading from peer: {e}")))?;
    if n == 0 {
        return Ok(Incoming::Closed);
    }
    Frame::parse(&line).map(Incoming::Frame).map_err(CliError::Protocol)
}

fn send<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    let mut line = frame.encode();
    line.push('\n');
    w.write_all(line.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(format!("writing to peer: {e}")))
}

/// Plant driver that forwards every TTI to the peer.
struct RemotePlants<R, W> {
    reader: R,
    writer: W,
    n: usize,
    failure: Option<CliError>,
}

impl<R: BufRead, W: Write> RemotePlants<R, W> {
    fn exchange(&mut self, tti_index: u64, applied: &[f64]) -> Result<Vec<f64>> {
        send(
            &mut self.writer,
            &Frame::Step {
                tti_index,
                values: applied.to_vec(),
            },
        )?;
        match read_frame(&mut self.reader)? {
            Incoming::Closed => Err(CliError::PeerClosed { completed: tti_index }),
            Incoming::Frame(Frame::State { tti_index: k, values }) => {
                if k != tti_index {
                    Err(CliError::Protocol(format!("expected STATE {tti_index}, got STATE {k}")))
                } else if values.len() != self.n {
                    Err(CliError::Protocol(format!(
                        "STATE {k} carries {} values for {} devices",
                        values.len(),
                        self.n
                    )))
                } else {
                    Ok(values)
                }
            }
            Incoming::Frame(Frame::Bye { reason }) => Err(CliError::Runtime(format!(
                "peer ended the session after {tti_index} TTIs: {reason}"
            ))),
            Incoming::Frame(other) => Err(CliError::Protocol(format!(
                "expected STATE {tti_index}, got {}",
                other.encode().split(' ').next().unwrap_or_default()
            ))),
        }
    }
}

impl<R: BufRead, W: Write> PlantDriver for RemotePlants<R, W> {
    fn advance(&mut self, tti_index: u64, applied: &[f64], _plants: &[PlantState]) -> grid5g_core::Result<Vec<f64>> {
        self.exchange(tti_index, applied).map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            CoreError::Driver(msg)
        })
    }
}

/// What an engine-side session produced, complete or not.
#[derive(Debug)]
pub struct Session {
    pub records: Vec<TraceRecord>,
    pub completed_ttis: u64,
    pub result: Result<()>,
}

/// Runs `engine` to the end with the peer on `reader`/`writer` as its plant.
pub fn serve<R: BufRead, W: Write>(engine: &mut Engine, reader: R, writer: W) -> Session {
    let n = engine.ders().len();
    let mut driver = RemotePlants {
        reader,
        writer,
        n,
        failure: None,
    };
    let mut records = Vec::new();
    let result = (|| {
        send(
            &mut driver.writer,
            &Frame::Hello {
                version: PROTOCOL_VERSION,
                n_ders: n,
            },
        )?;
        match read_frame(&mut driver.reader)? {
            Incoming::Closed => return Err(CliError::PeerClosed { completed: 0 }),
            Incoming::Frame(Frame::Hello { version, n_ders }) => {
                if version != PROTOCOL_VERSION {
                    return Err(CliError::Protocol(format!(
                        "peer speaks version {version}, expected {PROTOCOL_VERSION}"
                    )));
                }
                if n_ders != n {
                    return Err(CliError::Protocol(format!(
                        "peer has {n_ders} devices, scenario has {n}"
                    )));
                }
            }
            Incoming::Frame(other) => {
                return Err(CliError::Protocol(format!("expected HELLO, got {:?}", other.encode())));
            }
        }
        while !engine.is_finished() {
            match engine.step_tti_with(&mut driver) {
                Ok(out) => records.extend(out.record),
                Err(e) => return Err(driver.failure.take().unwrap_or_else(|| e.into())),
            }
        }
        send(&mut driver.writer, &Frame::Bye { reason: "done".into() })
    })();
    if let Err(CliError::Protocol(reason)) = &result {
        let _ = send(
            &mut driver.writer,
            &Frame::Bye {
                reason: reason.replace('\n', " "),
            },
        );
    }
    Session {
        completed_ttis: engine.clock().tti_index,
        records,
        result,
    }
}

/// Peer that integrates the same first-order plants as the engine does
/// internally.
pub struct ReferencePeer {
    plants: Vec<PlantState>,
    integrator: InternalPlants,
}

impl ReferencePeer {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            plants: scenario
                .ders
                .iter()
                .map(|d| PlantState::new(d.initial_output, d.tau))
                .collect(),
            integrator: InternalPlants::new(scenario),
        }
    }

    /// Serves one session; returns the number of TTIs stepped.
    pub fn run<R: BufRead, W: Write>(&mut self, mut reader: R, mut writer: W) -> Result<u64> {
        let n = self.plants.len();
        match read_frame(&mut reader)? {
            Incoming::Frame(Frame::Hello { version, n_ders }) if version == PROTOCOL_VERSION && n_ders == n => {}
            Incoming::Frame(Frame::Hello { version, n_ders }) => {
                let reason = format!("mismatch version {version} devices {n_ders}");
                send(&mut writer, &Frame::Bye { reason: reason.clone() })?;
                return Err(CliError::Protocol(reason));
            }
            Incoming::Frame(_) => return Err(CliError::Protocol("expected HELLO".into())),
            Incoming::Closed => return Err(CliError::PeerClosed { completed: 0 }),
        }
        send(
            &mut writer,
            &Frame::Hello {
                version: PROTOCOL_VERSION,
                n_ders: n,
            },
        )?;
        let mut next = 0u64;
        loop {
            match read_frame(&mut reader)? {
                Incoming::Frame(Frame::Step { tti_index, values }) if tti_index == next && values.len() == n => {
                    let lags = self
                        .integrator
                        .advance(tti_index, &values, &self.plants)
                        .map_err(CliError::from)?;
                    for (p, lag) in self.plants.iter_mut().zip(&lags) {
                        p.lag = *lag;
                    }
                    send(
                        &mut writer,
                        &Frame::State {
                            tti_index,
                            values: lags,
                        },
                    )?;
                    next += 1;
                }
                Incoming::Frame(Frame::Bye { .. }) => return Ok(next),
                Incoming::Frame(other) => {
                    let reason = format!("unexpected {}", other.encode());
                    send(&mut writer, &Frame::Bye { reason: reason.clone() })?;
                    return Err(CliError::Protocol(reason));
                }
                Incoming::Closed => return Err(CliError::PeerClosed { completed: next }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_round_trip() {
        for f in [
            Frame::Hello { version: 1, n_ders: 3 },
            Frame::Step {
                tti_index: 7,
                values: vec![0.25, -1.5, 0.0],
            },
            Frame::State {
                tti_index: 0,
                values: vec![1.0 / 3.0],
            },
            Frame::Bye { reason: "done".into() },
        ] {
            let line = f.encode();
            let back = Frame::parse(&line).unwrap();
            assert_eq!(back.encode(), line);
        }
        assert_eq!(Frame::parse("STATE 3 0.5 1e-3\n").unwrap(), Frame::State {
            tti_index: 3,
            values: vec![0.5, 1e-3]
        });
    }

    #[test]
    fn malformed_frames() {
        for bad in ["", "HELLO 1", "STEP", "STEP x 1", "STATE 1 nan", "STATE 1 0.5  0.2", "PING", "HELLO a 3"] {
            assert!(Frame::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn nine_digit_values() {
        let f = Frame::Step {
            tti_index: 1,
            values: vec![2.0 / 3.0],
        };
        assert_eq!(f.encode(), "STEP 1 0.666666667");
    }
}
