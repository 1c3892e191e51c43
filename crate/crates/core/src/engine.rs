//! Lock-step co-simulation loop.
//!
//! Each call to [`Engine::step_tti`] advances the radio and grid sides by
//! exactly one TTI, in this fixed order:
//!
//! 1. apply events due at this TTI
//! 2. every device senses its error; state packets are created (delivered
//!    on the spot in ideal mode, queued in 5G mode)
//! 3. buffer status reports, on BSR-period boundaries
//! 4. channel sample, CQI to modulation order
//! 5. resource-block allocation
//! 6. delivery of granted packets, visible to receivers from the next TTI
//! 7. controllers absorb visible deliveries and compute applied set points;
//!    a trace record is taken here on sample-period boundaries
//! 8. plants integrate over the TTI (internally, or through a [`PlantDriver`])

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::channel::{cqi_to_modulation, ChannelState};
use crate::control::{
    frequency_partition, pcc_aggregate, plant_step, self_terms, DerController, FreqPartition,
    PlantState, Topology,
};
use crate::error::{Error, Result};
use crate::ran::{
    deliver_packets, integer_ratio, report_bsr, Allocation, BufferStatus, Packet, RoundRobin,
    SchedulingPolicy, TxQueue,
};
use crate::scenario::{ControlScheme, Event, EventKind, Mode, Scenario};
use crate::DerId;

/// Shared time base. `now` is always derived from the integer TTI index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub tti_index: u64,
    pub tti: f64,
    pub substeps_per_tti: u32,
}

impl SimClock {
    pub fn now(&self) -> f64 {
        self.time_of(self.tti_index)
    }

    pub fn time_of(&self, tti_index: u64) -> f64 {
        tti_index as f64 * self.tti
    }
}

/// One device: its uplink queue, controller, plant and latest CQI.
#[derive(Debug, Clone)]
pub struct DerNode {
    pub id: DerId,
    pub queue: TxQueue,
    pub controller: DerController,
    pub plant: PlantState,
    pub cqi: Vec<u8>,
    pub delivered_this_tti: u32,
    central: Option<FreqPartition>,
    local: Option<FreqPartition>,
    command: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerSample {
    pub x_sp: f64,
    pub x_sp_prime: f64,
    pub x: f64,
    pub e: f64,
    pub e_pred: f64,
    pub queued: usize,
    pub delivered: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub ders: Vec<DerSample>,
    pub pcc: f64,
    /// Per device, per carrier.
    pub cqi: Vec<Vec<u8>>,
}

/// What happened in one TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub tti_index: u64,
    pub record: Option<TraceRecord>,
    pub allocation: Option<Allocation>,
    /// Packets delivered during this TTI.
    pub deliveries: Vec<Packet>,
}

/// Replaces internal plant integration for one TTI. Receives the applied set
/// point of every device and returns the new lag state of every plant
/// (output disturbances stay with the engine).
pub trait PlantDriver {
    fn advance(&mut self, tti_index: u64, applied: &[f64], plants: &[PlantState]) -> Result<Vec<f64>>;
}

/// Integrates each plant over `substeps` equal steps.
#[derive(Debug, Clone)]
pub struct InternalPlants {
    scenario_dt: f64,
    substeps: u32,
    modes: Vec<crate::control::Discretization>,
}

impl InternalPlants {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            scenario_dt: scenario.ran.tti / f64::from(scenario.substeps_per_tti),
            substeps: scenario.substeps_per_tti,
            modes: scenario.ders.iter().map(|d| d.discretization).collect(),
        }
    }
}

impl PlantDriver for InternalPlants {
    fn advance(&mut self, _tti_index: u64, applied: &[f64], plants: &[PlantState]) -> Result<Vec<f64>> {
        plants
            .iter()
            .zip(applied)
            .zip(&self.modes)
            .map(|((p, &u), &mode)| {
                let mut p = *p;
                for _ in 0..self.substeps {
                    p = plant_step(p, u, self.scenario_dt, mode)?;
                }
                Ok(p.lag)
            })
            .collect()
    }
}

pub struct Engine {
    scenario: Scenario,
    clock: SimClock,
    total_ttis: u64,
    sample_every: u64,
    bsr_every: u64,
    ders: Vec<DerNode>,
    topology: Topology,
    channel: ChannelState,
    policy: Box<dyn SchedulingPolicy>,
    internal: InternalPlants,
    next_event: usize,
    next_packet_id: u64,
    bsrs: Vec<BufferStatus>,
    /// Delivered packets waiting for the TTI at which they become visible.
    in_flight: Vec<(u64, Packet)>,
}

impl Engine {
    pub fn new(scenario: Scenario) -> Result<Self> {
        Self::with_policy(scenario, Box::new(RoundRobin::default()))
    }

    pub fn with_policy(scenario: Scenario, policy: Box<dyn SchedulingPolicy>) -> Result<Self> {
        scenario.validate()?;
        let n = scenario.n_ders();
        let carriers = scenario.ran.aggregated_carriers;
        let ders = scenario
            .ders
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let controller = DerController::new(spec.initial_setpoint, spec.gain, spec.pred_horizon);
                let (central, local) = match scenario.control {
                    ControlScheme::Coordinated => (None, None),
                    ControlScheme::FrequencyPartition(p) => (
                        Some(FreqPartition::with_initial(p.cutoff_hz, spec.initial_setpoint)),
                        Some(FreqPartition::with_initial(
                            p.cutoff_hz,
                            -p.local_gain * spec.initial_output,
                        )),
                    ),
                };
                DerNode {
                    id: DerId(i),
                    queue: TxQueue::new(scenario.ran.queue_cap),
                    controller,
                    plant: PlantState::new(spec.initial_output, spec.tau),
                    cqi: vec![0; carriers],
                    delivered_this_tti: 0,
                    central,
                    local,
                    command: spec.initial_setpoint,
                }
            })
            .collect();
        let clock = SimClock {
            tti_index: 0,
            tti: scenario.ran.tti,
            substeps_per_tti: scenario.substeps_per_tti,
        };
        let channel = ChannelState::new(scenario.channel.clone(), n, carriers, scenario.seed);
        let bsrs = (0..n)
            .map(|i| BufferStatus {
                der: DerId(i),
                pending_packets: 0,
                reported_at: 0.0,
            })
            .collect();
        Ok(Self {
            total_ttis: scenario.total_ttis(),
            sample_every: integer_ratio(scenario.sample_period, scenario.ran.tti).unwrap_or(1),
            bsr_every: scenario.ran.bsr_every(),
            topology: scenario.topology.clone(),
            internal: InternalPlants::new(&scenario),
            ders,
            clock,
            channel,
            policy,
            next_event: 0,
            next_packet_id: 0,
            bsrs,
            in_flight: Vec::new(),
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn total_ttis(&self) -> u64 {
        self.total_ttis
    }

    pub fn is_finished(&self) -> bool {
        self.clock.tti_index >= self.total_ttis
    }

    pub fn ders(&self) -> &[DerNode] {
        &self.ders
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn policy_name(&self) -> &'static str {
        self.policy.name()
    }

    /// Packets delivered but not yet visible to their receivers.
    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn apply_event(&mut self, event: &Event) -> Result<()> {
        for d in event.kind.ders() {
            if d.0 >= self.ders.len() {
                return Err(Error::Config(format!("event names unknown device {}", d.number())));
            }
        }
        match &event.kind {
            EventKind::Setpoint { ders, value } => {
                for d in ders {
                    self.ders[d.0].controller.setpoint = *value;
                }
            }
            EventKind::LinkFail { der, both } => self.topology.set_links(*der, false, *both),
            EventKind::LinkRestore { der, both } => self.topology.set_links(*der, true, *both),
            EventKind::Disturbance { ders, delta } => {
                for d in ders {
                    self.ders[d.0].plant.disturbance += *delta;
                }
            }
        }
        Ok(())
    }

    pub fn step_tti(&mut self) -> Result<StepOutcome> {
        let mut internal = self.internal.clone();
        self.step_tti_with(&mut internal)
    }

    pub fn step_tti_with(&mut self, driver: &mut dyn PlantDriver) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::EndOfSimulation(self.clock.tti_index));
        }
        let k = self.clock.tti_index;
        let now = self.clock.now();
        let tti = self.clock.tti;
        let ideal = self.scenario.mode == Mode::Ideal;

        // 1. events
        while let Some(ev) = self.scenario.events.get(self.next_event) {
            if self.scenario.event_tti(ev) > k {
                break;
            }
            let ev = ev.clone();
            self.apply_event(&ev)?;
            self.next_event += 1;
        }

        // 2. sense and generate traffic
        for node in &mut self.ders {
            node.delivered_this_tti = 0;
        }
        let outputs: Vec<f64> = self.ders.iter().map(|d| d.plant.output()).collect();
        let pcc = pcc_aggregate(&outputs)?;
        let mut fresh = Vec::new();
        match self.scenario.control {
            ControlScheme::Coordinated => {
                #[allow(clippy::needless_range_loop)]
                for i in 0..self.ders.len() {
                    let pred = self.ders[i].controller.sense(outputs[i], tti)?;
                    let src = DerId(i);
                    for dest in self.topology.listeners_of(src) {
                        if self.topology.is_up(dest, src) {
                            fresh.push((src, dest, pred));
                        }
                    }
                }
            }
            ControlScheme::FrequencyPartition(_) => {
                for (i, node) in self.ders.iter_mut().enumerate() {
                    let pred = node.controller.sense(pcc, tti)?;
                    let command = self_terms(node.controller.setpoint, node.controller.gain, pred);
                    let central = node.central.as_mut().expect("partition state");
                    let (low, _) = frequency_partition(command, central, tti)?;
                    fresh.push((DerId(i), DerId(i), low));
                }
            }
        }
        let mut deliveries = Vec::new();
        for (src, dest, value) in fresh {
            let packet = Packet {
                id: self.next_packet_id,
                source: src,
                dest,
                size: self.scenario.ran.packet_size,
                created_at: now,
                delivered_at: ideal.then_some(now),
                payload_value: value,
            };
            self.next_packet_id += 1;
            let node = &mut self.ders[src.0];
            if ideal {
                node.queue.record_direct_delivery();
                node.delivered_this_tti += 1;
                deliveries.push(packet.clone());
                self.in_flight.push((k, packet));
            } else {
                node.queue.push(packet);
            }
        }

        // 3. buffer status
        if k.is_multiple_of(self.bsr_every) {
            for (bsr, node) in self.bsrs.iter_mut().zip(&self.ders) {
                *bsr = report_bsr(node.id, &node.queue, now);
            }
        }

        // 4. channel
        let reports = self.channel.sample(k);
        let mut qms = Vec::with_capacity(reports.len());
        for (node, report) in self.ders.iter_mut().zip(&reports) {
            node.cqi.clone_from(&report.per_carrier_cqi);
            let per_carrier = report
                .per_carrier_cqi
                .iter()
                .map(|&c| Ok(self.scenario.ran.effective_qm(cqi_to_modulation(c)?)))
                .collect::<Result<Vec<u8>>>()?;
            qms.push(per_carrier);
        }

        // 5-6. schedule and deliver
        let allocation = if ideal {
            None
        } else {
            let allocation = self.policy.allocate(k, &self.bsrs, &self.scenario.ran);
            let delivered_at = self.clock.time_of(k + 1);
            for (&der, &rbs) in &allocation.grants {
                let node = &mut self.ders[der.0];
                let out = deliver_packets(&mut node.queue, rbs, &self.scenario.ran, &qms[der.0], delivered_at)?;
                node.delivered_this_tti += out.len() as u32;
                for p in out {
                    deliveries.push(p.clone());
                    self.in_flight.push((k + 1, p));
                }
            }
            Some(allocation)
        };

        // 7. absorb visible deliveries, compute applied set points
        let mut pending = Vec::with_capacity(self.in_flight.len());
        for (visible_at, p) in core::mem::take(&mut self.in_flight) {
            if visible_at > k {
                pending.push((visible_at, p));
                continue;
            }
            let at = p.delivered_at.unwrap_or(now);
            let dest = &mut self.ders[p.dest.0];
            match self.scenario.control {
                ControlScheme::Coordinated => dest.controller.receive(p.source, p.payload_value, at),
                ControlScheme::FrequencyPartition(_) => dest.command = p.payload_value,
            }
        }
        self.in_flight = pending;

        let mut applied = Vec::with_capacity(self.ders.len());
        for (i, node) in self.ders.iter_mut().enumerate() {
            let u = match self.scenario.control {
                ControlScheme::Coordinated => {
                    let peers = self.topology.peers_of(DerId(i));
                    let view = node.controller.neighbor_view(&peers, now);
                    node.controller.update_modulated(&view)
                }
                ControlScheme::FrequencyPartition(p) => {
                    let local = node.local.as_mut().expect("partition state");
                    let (_, high) = frequency_partition(-p.local_gain * outputs[i], local, tti)?;
                    node.controller.modulated_setpoint = node.command + high;
                    node.controller.modulated_setpoint
                }
            };
            applied.push(u);
        }

        let record = k.is_multiple_of(self.sample_every).then(|| TraceRecord {
            t: now,
            ders: self
                .ders
                .iter()
                .zip(&outputs)
                .map(|(node, &x)| DerSample {
                    x_sp: node.controller.setpoint,
                    x_sp_prime: node.controller.modulated_setpoint,
                    x,
                    e: node.controller.last_error,
                    e_pred: node.controller.last_pred,
                    queued: node.queue.len(),
                    delivered: node.delivered_this_tti,
                })
                .collect(),
            pcc,
            cqi: self.ders.iter().map(|n| n.cqi.clone()).collect(),
        });

        // 8. plants
        let plants: Vec<PlantState> = self.ders.iter().map(|d| d.plant).collect();
        let lags = driver.advance(k, &applied, &plants)?;
        if lags.len() != self.ders.len() {
            return Err(Error::Driver(format!(
                "plant driver returned {} states for {} devices",
                lags.len(),
                self.ders.len()
            )));
        }
        for (node, lag) in self.ders.iter_mut().zip(lags) {
            node.plant.lag = lag;
        }

        self.clock.tti_index += 1;
        Ok(StepOutcome {
            tti_index: k,
            record,
            allocation,
            deliveries,
        })
    }

    /// Runs to the end of the scenario, collecting trace records.
    pub fn run_to_end(&mut self) -> Result<Vec<TraceRecord>> {
        let mut records = Vec::new();
        while !self.is_finished() {
            if let Some(r) = self.step_tti()?.record {
                records.push(r);
            }
        }
        Ok(records)
    }
}

pub fn run(scenario: Scenario) -> Result<Vec<TraceRecord>> {
    Engine::new(scenario)?.run_to_end()
}
