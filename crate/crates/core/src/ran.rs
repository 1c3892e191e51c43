//! gNodeB side of the radio access network: buffer status collection,
//! resource-block allocation and per-link bit accounting.
//!
//! Throughput follows the TS 38.306 approximation
//!
//! ```text
//! sum_j  v_j * Qm_j * f_j * R_max * (12 * N_PRB / T_s(mu)) * (1 - OH_j)
//! ```
//!
//! evaluated in bit/s; conversion to Mbps only happens when reporting.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result, Violation};
use crate::DerId;

/// Modulation orders a device may be granted.
pub const ADMISSIBLE_QM: [u8; 4] = [2, 4, 6, 8];

/// Largest numerology accepted by [`symbol_time`].
pub const MAX_NUMEROLOGY: u8 = 4;

/// Radio parameters. `Default` gives the reference deployment: two aggregated
/// carriers, two layers, numerology 2, three RBs shared one per device, 1 ms
/// TTI and BSR period, 150-byte packets.
#[derive(Debug, Clone, PartialEq)]
pub struct RanConfig {
    pub aggregated_carriers: usize,
    pub modulation_orders: Vec<u8>,
    pub max_layers: u32,
    pub scaling_factor: f64,
    pub max_code_rate: f64,
    pub numerology: u8,
    pub total_rbs: u32,
    pub rbs_per_der: u32,
    /// Fraction of capacity lost to control overhead, in `[0, 1)`.
    pub overhead: f64,
    /// Transmission time interval, seconds.
    pub tti: f64,
    /// Buffer status report period, seconds. Integer multiple of `tti`.
    pub bsr_period: f64,
    /// Packet size in bytes.
    pub packet_size: u32,
    /// Hz; informational, the throughput formula works from RB counts.
    pub bandwidth: f64,
    /// Hz; informational.
    pub carrier_freq: f64,
    /// Per-device transmit queue limit; the oldest packet is dropped on overflow.
    pub queue_cap: usize,
    /// Every granted device drains its whole queue regardless of CQI.
    pub infinite_capacity: bool,
}

impl Default for RanConfig {
    fn default() -> Self {
        Self {
            aggregated_carriers: 2,
            modulation_orders: ADMISSIBLE_QM.to_vec(),
            max_layers: 2,
            scaling_factor: 0.8,
            max_code_rate: 948.0 / 1024.0,
            numerology: 2,
            total_rbs: 3,
            rbs_per_der: 1,
            overhead: 0.08,
            tti: 1e-3,
            bsr_period: 1e-3,
            packet_size: 150,
            bandwidth: 5e6,
            carrier_freq: 2.63e9,
            queue_cap: 1000,
            infinite_capacity: false,
        }
    }
}

impl RanConfig {
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(1..=16).contains(&self.aggregated_carriers) {
            out.push(Violation::new(
                "ran.aggregated_carriers",
                format!("must be in 1..=16, got {}", self.aggregated_carriers),
            ));
        }
        if self.modulation_orders.is_empty() {
            out.push(Violation::new("ran.modulation_orders", "must not be empty"));
        }
        for qm in &self.modulation_orders {
            if !ADMISSIBLE_QM.contains(qm) {
                out.push(Violation::new(
                    "ran.modulation_orders",
                    format!("{qm} is not one of 2, 4, 6, 8"),
                ));
            }
        }
        if self.max_layers == 0 {
            out.push(Violation::new("ran.max_layers", "must be at least 1"));
        }
        if !(self.scaling_factor > 0.0 && self.scaling_factor <= 1.0) {
            out.push(Violation::new(
                "ran.scaling_factor",
                format!("must be in (0, 1], got {}", self.scaling_factor),
            ));
        }
        if !(self.max_code_rate > 0.0 && self.max_code_rate <= 1.0) {
            out.push(Violation::new(
                "ran.max_code_rate",
                format!("must be in (0, 1], got {}", self.max_code_rate),
            ));
        }
        if self.numerology > MAX_NUMEROLOGY {
            out.push(Violation::new(
                "ran.numerology",
                format!("must be in 0..={MAX_NUMEROLOGY}, got {}", self.numerology),
            ));
        }
        if self.total_rbs == 0 {
            out.push(Violation::new("ran.total_rbs", "must be at least 1"));
        }
        if self.rbs_per_der == 0 || self.rbs_per_der > self.total_rbs {
            out.push(Violation::new(
                "ran.rbs_per_der",
                format!(
                    "must be in 1..=total_rbs ({}), got {}",
                    self.total_rbs, self.rbs_per_der
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.overhead) {
            out.push(Violation::new(
                "ran.overhead",
                format!("must be in [0, 1), got {}", self.overhead),
            ));
        }
        if !(self.tti > 0.0 && self.tti.is_finite()) {
            out.push(Violation::new(
                "ran.tti_s",
                format!("must be > 0, got {}", self.tti),
            ));
        } else if !(self.bsr_period > 0.0) || integer_ratio(self.bsr_period, self.tti).is_none() {
            out.push(Violation::new(
                "ran.bsr_period_s",
                format!(
                    "BSR period {} s must be a positive integer multiple of the TTI {} s",
                    self.bsr_period, self.tti
                ),
            ));
        }
        if self.packet_size == 0 {
            out.push(Violation::new("ran.packet_size_bytes", "must be > 0"));
        }
        if self.queue_cap == 0 {
            out.push(Violation::new("ran.queue_cap", "must be at least 1"));
        }
        out
    }

    /// Number of TTIs between buffer status reports.
    pub fn bsr_every(&self) -> u64 {
        integer_ratio(self.bsr_period, self.tti).unwrap_or(1)
    }

    pub fn packet_bits(&self) -> f64 {
        8.0 * f64::from(self.packet_size)
    }

    /// Restricts a modulation order to the configured set: the largest
    /// configured order not above `qm`, or the smallest configured one.
    pub fn effective_qm(&self, qm: u8) -> u8 {
        let below = self.modulation_orders.iter().copied().filter(|&q| q <= qm).max();
        below
            .or_else(|| self.modulation_orders.iter().copied().min())
            .unwrap_or(qm)
    }
}

/// `Some(n)` when `value` is `n >= 1` whole multiples of `unit`.
pub fn integer_ratio(value: f64, unit: f64) -> Option<u64> {
    if !(unit > 0.0) || !value.is_finite() {
        return None;
    }
    let ratio = value / unit;
    let n = libm::round(ratio);
    if n >= 1.0 && libm::fabs(ratio - n) <= 1e-9 * n {
        Some(n as u64)
    } else {
        None
    }
}

/// OFDM symbol time for numerology `mu`: 1 ms spread over 14 symbols per
/// slot and `2^mu` slots.
pub fn symbol_time(mu: u8) -> Result<f64> {
    if mu > MAX_NUMEROLOGY {
        return Err(Error::Config(format!(
            "numerology {mu} outside 0..={MAX_NUMEROLOGY}"
        )));
    }
    Ok(1e-3 / (14.0 * f64::from(1u32 << mu)))
}

/// Throughput of one component carrier in bit/s.
pub fn carrier_throughput(cfg: &RanConfig, qm: u8, n_prb: u32) -> Result<f64> {
    if !ADMISSIBLE_QM.contains(&qm) {
        return Err(Error::Input(format!("modulation order {qm} not admissible")));
    }
    let ts = symbol_time(cfg.numerology)?;
    Ok(f64::from(cfg.max_layers)
        * f64::from(qm)
        * cfg.scaling_factor
        * cfg.max_code_rate
        * (12.0 * f64::from(n_prb) / ts)
        * (1.0 - cfg.overhead))
}

/// Sum of [`carrier_throughput`] over the aggregated carriers, each with its
/// own modulation order.
pub fn aggregate_throughput(cfg: &RanConfig, per_carrier_qm: &[u8], n_prb: u32) -> Result<f64> {
    if per_carrier_qm.len() != cfg.aggregated_carriers {
        return Err(Error::Config(format!(
            "expected {} per-carrier modulation orders, got {}",
            cfg.aggregated_carriers,
            per_carrier_qm.len()
        )));
    }
    per_carrier_qm
        .iter()
        .try_fold(0.0, |acc, &qm| Ok(acc + carrier_throughput(cfg, qm, n_prb)?))
}

/// Bytes to Mbps helper for reports.
pub fn to_mbps(bits_per_second: f64) -> f64 {
    bits_per_second * 1e-6
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    /// Device whose uplink carries the packet.
    pub source: DerId,
    /// Device that consumes the payload. Equal to `source` for central
    /// commands addressed to the link owner.
    pub dest: DerId,
    pub size: u32,
    pub created_at: f64,
    pub delivered_at: Option<f64>,
    pub payload_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferStatus {
    pub der: DerId,
    pub pending_packets: usize,
    pub reported_at: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Allocation {
    pub tti_index: u64,
    pub grants: BTreeMap<DerId, u32>,
}

impl Allocation {
    pub fn total(&self) -> u32 {
        self.grants.values().sum()
    }

    pub fn granted(&self, der: DerId) -> u32 {
        self.grants.get(&der).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundRobinState {
    pub cursor: usize,
}

/// Grants `rbs_per_der` RBs to each backlogged device in circular order,
/// starting at the cursor, until the RBs run out or every device was visited.
/// Devices with an empty buffer are skipped. The returned cursor points just
/// past the last device served.
pub fn schedule_round_robin(
    bsrs: &[BufferStatus],
    cfg: &RanConfig,
    state: RoundRobinState,
    tti_index: u64,
) -> (Allocation, RoundRobinState) {
    let mut alloc = Allocation {
        tti_index,
        grants: BTreeMap::new(),
    };
    let n = bsrs.len();
    if n == 0 {
        return (alloc, state);
    }
    let start = state.cursor % n;
    let mut remaining = cfg.total_rbs;
    let mut last_served = None;
    for offset in 0..n {
        if remaining == 0 {
            break;
        }
        let idx = (start + offset) % n;
        let bsr = &bsrs[idx];
        if bsr.pending_packets == 0 {
            continue;
        }
        let grant = cfg.rbs_per_der.min(remaining);
        remaining -= grant;
        alloc.grants.insert(bsr.der, grant);
        last_served = Some(idx);
    }
    let next = match last_served {
        Some(idx) => RoundRobinState {
            cursor: (idx + 1) % n,
        },
        None => state,
    };
    (alloc, next)
}

/// Resource allocation policy run by the gNodeB once per TTI.
pub trait SchedulingPolicy {
    fn name(&self) -> &'static str;

    fn allocate(&mut self, tti_index: u64, bsrs: &[BufferStatus], cfg: &RanConfig) -> Allocation;
}

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    pub state: RoundRobinState,
}

impl SchedulingPolicy for RoundRobin {
    fn name(&self) -> &'static str {
        "round_robin"
    }

    fn allocate(&mut self, tti_index: u64, bsrs: &[BufferStatus], cfg: &RanConfig) -> Allocation {
        let (alloc, next) = schedule_round_robin(bsrs, cfg, self.state, tti_index);
        self.state = next;
        alloc
    }
}

/// FIFO transmit queue of one device, with conservation counters.
#[derive(Debug, Clone, Default)]
pub struct TxQueue {
    packets: VecDeque<Packet>,
    cap: usize,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Highest occupancy seen, counting the arriving packet before any drop.
    pub peak: usize,
}

impl TxQueue {
    pub fn new(cap: usize) -> Self {
        Self {
            packets: VecDeque::new(),
            cap: cap.max(1),
            ..Self::default()
        }
    }

    /// Enqueues a packet, dropping the oldest one when the queue is full.
    pub fn push(&mut self, packet: Packet) {
        self.generated += 1;
        self.peak = self.peak.max(self.packets.len() + 1);
        if self.packets.len() >= self.cap {
            self.packets.pop_front();
            self.dropped += 1;
        }
        self.packets.push_back(packet);
    }

    /// Counts a packet that bypassed the queue (ideal channel).
    pub fn record_direct_delivery(&mut self) {
        self.generated += 1;
        self.delivered += 1;
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter()
    }

    fn pop_front(&mut self) -> Option<Packet> {
        let p = self.packets.pop_front();
        if p.is_some() {
            self.delivered += 1;
        }
        p
    }
}

/// Exact queue length, reported out of band without loss or delay.
pub fn report_bsr(der: DerId, queue: &TxQueue, now: f64) -> BufferStatus {
    BufferStatus {
        der,
        pending_packets: queue.len(),
        reported_at: now,
    }
}

/// Number of whole packets that fit in one TTI worth of bits.
pub fn packet_budget(
    cfg: &RanConfig,
    granted_rbs: u32,
    per_carrier_qm: &[u8],
) -> Result<usize> {
    if granted_rbs == 0 {
        return Ok(0);
    }
    if cfg.infinite_capacity {
        return Ok(usize::MAX);
    }
    let bits = aggregate_throughput(cfg, per_carrier_qm, granted_rbs)? * cfg.tti;
    Ok(libm::floor(bits / cfg.packet_bits()) as usize)
}

/// Dequeues as many whole packets as the grant carries this TTI, FIFO, and
/// stamps them with `delivered_at`. Leftover bits are discarded.
pub fn deliver_packets(
    queue: &mut TxQueue,
    granted_rbs: u32,
    cfg: &RanConfig,
    per_carrier_qm: &[u8],
    delivered_at: f64,
) -> Result<Vec<Packet>> {
    let budget = packet_budget(cfg, granted_rbs, per_carrier_qm)?;
    let n = budget.min(queue.len());
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if let Some(mut p) = queue.pop_front() {
            p.delivered_at = Some(delivered_at);
            out.push(p);
        }
    }
    Ok(out)
}
