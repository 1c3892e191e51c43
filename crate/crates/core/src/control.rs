//! Grid side: surrogate DER plants, predictive tracking errors, coordinated
//! set-point modulation and the low/high frequency split between a remote
//! central controller and local controllers.
//!
//! Coordinated set-point modulation for device `i`:
//!
//! ```text
//! x'_i = x_sp,i + m_i * e_pred,i + m_i * sum_{j != i} a_ij * e_pred,j
//! ```
//!
//! where `e_pred` is a linear extrapolation of the tracking error
//! `e = x_sp - x` over a prediction horizon.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::DerId;

pub fn tracking_error(setpoint: f64, output: f64) -> f64 {
    setpoint - output
}

/// `e_now + horizon * (e_now - e_prev) / dt`.
pub fn predictive_error(e_now: f64, e_prev: f64, dt: f64, horizon: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("prediction step dt must be > 0, got {dt}")));
    }
    Ok(e_now + horizon * (e_now - e_prev) / dt)
}

/// A neighbor's contribution as seen by the receiving controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborTerm {
    /// Latest received predictive error, `None` until the first delivery.
    pub value: Option<f64>,
    pub link_up: bool,
}

/// `x_sp + m * e_pred_self`; the part of the law that needs no communication.
pub fn self_terms(setpoint: f64, gain: f64, self_pred: f64) -> f64 {
    setpoint + gain * self_pred
}

/// `m * sum(e_pred_j)` over neighbors that are linked and have reported.
pub fn neighbor_terms(gain: f64, neighbors: &[NeighborTerm]) -> f64 {
    let sum: f64 = neighbors
        .iter()
        .filter(|n| n.link_up)
        .filter_map(|n| n.value)
        .sum();
    gain * sum
}

pub fn modulated_setpoint(setpoint: f64, gain: f64, self_pred: f64, neighbors: &[NeighborTerm]) -> f64 {
    self_terms(setpoint, gain, self_pred) + neighbor_terms(gain, neighbors)
}

/// Last value received from a neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Received {
    pub value: f64,
    pub received_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerController {
    pub setpoint: f64,
    pub gain: f64,
    pub pred_horizon: f64,
    pub last_error: f64,
    pub last_pred: f64,
    prev_error: Option<f64>,
    pub neighbor_errors: BTreeMap<DerId, Received>,
    pub modulated_setpoint: f64,
}

impl DerController {
    pub fn new(setpoint: f64, gain: f64, pred_horizon: f64) -> Self {
        Self {
            setpoint,
            gain,
            pred_horizon,
            last_error: 0.0,
            last_pred: 0.0,
            prev_error: None,
            neighbor_errors: BTreeMap::new(),
            modulated_setpoint: setpoint,
        }
    }

    /// Samples the tracking error against `measured` and updates the
    /// predictive error. The first sample has no history and predicts flat.
    pub fn sense(&mut self, measured: f64, dt: f64) -> Result<f64> {
        let e = tracking_error(self.setpoint, measured);
        let prev = self.prev_error.unwrap_or(e);
        let pred = predictive_error(e, prev, dt, self.pred_horizon)?;
        self.prev_error = Some(e);
        self.last_error = e;
        self.last_pred = pred;
        Ok(pred)
    }

    /// Stores a delivered neighbor value. Values are applied in delivery
    /// order, so the latest one wins.
    pub fn receive(&mut self, from: DerId, value: f64, received_at: f64) {
        self.neighbor_errors.insert(from, Received { value, received_at });
    }

    /// Builds neighbor terms for `peers` using only values received by `now`.
    pub fn neighbor_view(&self, peers: &[(DerId, bool)], now: f64) -> Vec<NeighborTerm> {
        peers
            .iter()
            .map(|&(id, link_up)| NeighborTerm {
                value: self
                    .neighbor_errors
                    .get(&id)
                    .filter(|r| r.received_at <= now)
                    .map(|r| r.value),
                link_up,
            })
            .collect()
    }

    pub fn update_modulated(&mut self, neighbors: &[NeighborTerm]) -> f64 {
        self.modulated_setpoint = modulated_setpoint(self.setpoint, self.gain, self.last_pred, neighbors);
        self.modulated_setpoint
    }
}

/// Communication graph. `adjacency[i][j]` means device `i` uses device `j`'s
/// predictive error; `link_up[i][j]` says whether that link currently works.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    link_up: Vec<Vec<bool>>,
}

impl Topology {
    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!(
                    "adjacency row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            if row[i] {
                return Err(Error::Config(format!("a_{0}{0} must be 0", i + 1)));
            }
        }
        let link_up = adjacency.clone();
        Ok(Self { adjacency, link_up })
    }

    pub fn all_to_all(n: usize) -> Self {
        let adjacency: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect();
        Self {
            link_up: adjacency.clone(),
            adjacency,
        }
    }

    pub fn isolated(n: usize) -> Self {
        Self {
            adjacency: vec![vec![false; n]; n],
            link_up: vec![vec![false; n]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn connected(&self, receiver: DerId, sender: DerId) -> bool {
        self.adjacency[receiver.0][sender.0]
    }

    pub fn is_up(&self, receiver: DerId, sender: DerId) -> bool {
        self.link_up[receiver.0][sender.0]
    }

    /// Peers device `i` listens to, with their current link state.
    pub fn peers_of(&self, receiver: DerId) -> Vec<(DerId, bool)> {
        (0..self.len())
            .filter(|&j| self.adjacency[receiver.0][j])
            .map(|j| (DerId(j), self.link_up[receiver.0][j]))
            .collect()
    }

    /// Devices that listen to `sender`.
    pub fn listeners_of(&self, sender: DerId) -> impl Iterator<Item = DerId> + '_ {
        (0..self.len())
            .filter(move |&i| self.adjacency[i][sender.0])
            .map(DerId)
    }

    /// Sets every link that carries `der`'s state to others. With `both`,
    /// links into `der` change too.
    pub fn set_links(&mut self, der: DerId, up: bool, both: bool) {
        let n = self.len();
        for i in 0..n {
            if self.adjacency[i][der.0] {
                self.link_up[i][der.0] = up;
            }
            if both && self.adjacency[der.0][i] {
                self.link_up[der.0][i] = up;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    /// `x' = u + (x - u) exp(-dt / tau)`.
    #[default]
    Exact,
    /// Forward Euler; needs `dt <= tau / 2`.
    Explicit,
}

/// First-order lag surrogate plant. The measured output is the lag state plus
/// an additive output disturbance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub lag: f64,
    pub tau: f64,
    pub disturbance: f64,
}

impl PlantState {
    pub fn new(initial: f64, tau: f64) -> Self {
        Self {
            lag: initial,
            tau,
            disturbance: 0.0,
        }
    }

    pub fn output(&self) -> f64 {
        self.lag + self.disturbance
    }
}

pub fn plant_step(p: PlantState, u: f64, dt: f64, mode: Discretization) -> Result<PlantState> {
    if !(p.tau > 0.0) {
        return Err(Error::Config(format!("plant time constant must be > 0, got {}", p.tau)));
    }
    let lag = match mode {
        Discretization::Exact => u + (p.lag - u) * libm::exp(-dt / p.tau),
        Discretization::Explicit => {
            if !(dt > 0.0 && dt <= p.tau / 2.0) {
                return Err(Error::Config(format!(
                    "explicit plant step needs 0 < dt <= tau/2 (dt = {dt}, tau = {})",
                    p.tau
                )));
            }
            p.lag + dt * (u - p.lag) / p.tau
        }
    };
    Ok(PlantState { lag, ..p })
}

pub fn pcc_aggregate(outputs: &[f64]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::Input("PCC aggregate of zero devices".into()));
    }
    Ok(outputs.iter().sum::<f64>() / outputs.len() as f64)
}

/// Complementary first-order low/high split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqPartition {
    pub cutoff_hz: f64,
    low: f64,
}

impl FreqPartition {
    pub fn new(cutoff_hz: f64) -> Self {
        Self::with_initial(cutoff_hz, 0.0)
    }

    /// Starts the low-pass memory at `value`, i.e. in steady state for a
    /// constant input `value`.
    pub fn with_initial(cutoff_hz: f64, value: f64) -> Self {
        Self { cutoff_hz, low: value }
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn time_constant(&self) -> f64 {
        1.0 / (2.0 * PI * self.cutoff_hz)
    }
}

/// Returns `(low, high)` with `low + high == sample` (up to one rounding).
pub fn frequency_partition(sample: f64, fp: &mut FreqPartition, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) || !(fp.cutoff_hz > 0.0) {
        return Err(Error::Input(format!(
            "frequency partition needs dt > 0 and cutoff > 0 (dt = {dt}, cutoff = {})",
            fp.cutoff_hz
        )));
    }
    let alpha = dt / (dt + fp.time_constant());
    fp.low += alpha * (sample - fp.low);
    Ok((fp.low, sample - fp.low))
}
