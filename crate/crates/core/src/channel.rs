//! Random time-varying channel: per-device, per-carrier CQI and the CQI to
//! modulation-order map.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Violation};
use crate::DerId;

pub const CQI_MIN: u8 = 1;
pub const CQI_MAX: u8 = 15;

/// Piecewise map onto the modulation alphabet {2, 4, 6, 8}:
/// CQI 1-6 -> 2, 7-9 -> 4, 10-12 -> 6, 13-15 -> 8.
pub fn cqi_to_modulation(cqi: u8) -> Result<u8> {
    match cqi {
        1..=6 => Ok(2),
        7..=9 => Ok(4),
        10..=12 => Ok(6),
        13..=15 => Ok(8),
        _ => Err(Error::Input(format!("CQI {cqi} outside 1..=15"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelModel {
    /// Every CQI drawn uniformly from 1..=15, independently each TTI.
    #[default]
    IidUniform,
    /// Keep the previous CQI with `markov_stay_prob`, otherwise move one step
    /// up or down (equally likely), clamped to 1..=15.
    MarkovStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub model: ChannelModel,
    pub markov_stay_prob: f64,
    /// One CQI per device shared by all of its carriers.
    pub shared_cqi: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            model: ChannelModel::IidUniform,
            markov_stay_prob: 0.9,
            shared_cqi: false,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.markov_stay_prob) {
            out.push(Violation::new(
                "channel.markov_stay_prob",
                format!("must be in [0, 1], got {}", self.markov_stay_prob),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CqiReport {
    pub der: DerId,
    pub per_carrier_cqi: Vec<u8>,
    pub tti_index: u64,
}

impl CqiReport {
    pub fn modulation_orders(&self) -> Vec<u8> {
        self.per_carrier_cqi
            .iter()
            .map(|&c| cqi_to_modulation(c).unwrap_or(2))
            .collect()
    }
}

/// One Markov transition. `stay_draw` and `up` are the two random draws, split
/// out so the transition can be checked without an RNG.
pub fn markov_transition(current: u8, stay_prob: f64, stay_draw: f64, up: bool) -> u8 {
    if stay_draw < stay_prob {
        current
    } else if up {
        (current + 1).min(CQI_MAX)
    } else {
        current.saturating_sub(1).max(CQI_MIN)
    }
}

#[derive(Debug, Clone)]
pub struct ChannelState {
    rng: ChaCha8Rng,
    config: ChannelConfig,
    carriers: usize,
    current: Vec<Vec<u8>>,
    started: bool,
}

impl ChannelState {
    pub fn new(config: ChannelConfig, n_ders: usize, carriers: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            config,
            carriers,
            current: vec![vec![CQI_MAX; carriers]; n_ders],
            started: false,
        }
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    /// Last sampled CQI per device per carrier.
    pub fn current(&self) -> &[Vec<u8>] {
        &self.current
    }

    fn uniform(&mut self) -> u8 {
        self.rng.gen_range(CQI_MIN..=CQI_MAX)
    }

    fn next_value(&mut self, prev: u8) -> u8 {
        match self.config.model {
            ChannelModel::IidUniform => self.uniform(),
            ChannelModel::MarkovStep if !self.started => self.uniform(),
            ChannelModel::MarkovStep => {
                let stay_draw: f64 = self.rng.gen();
                let up: bool = self.rng.gen();
                markov_transition(prev, self.config.markov_stay_prob, stay_draw, up)
            }
        }
    }

    /// Draws this TTI's CQI for every device. Device-major, carrier-minor draw
    /// order; the Markov model's first call draws its starting point uniformly.
    pub fn sample(&mut self, tti_index: u64) -> Vec<CqiReport> {
        let n = self.current.len();
        let mut reports = Vec::with_capacity(n);
        for der in 0..n {
            if self.config.shared_cqi {
                let v = self.next_value(self.current[der].first().copied().unwrap_or(CQI_MAX));
                self.current[der].iter_mut().for_each(|c| *c = v);
            } else {
                for carrier in 0..self.carriers {
                    let prev = self.current[der][carrier];
                    self.current[der][carrier] = self.next_value(prev);
                }
            }
            reports.push(CqiReport {
                der: DerId(der),
                per_carrier_cqi: self.current[der].clone(),
                tti_index,
            });
        }
        self.started = true;
        reports
    }
}
