//! Scenario file format, schema version 1.
//!
//! A scenario is a single TOML document. Every key except `schema_version`,
//! `name`, `duration_s` and the `[[der]]` list is optional and falls back to
//! the reference configuration. Unknown keys are rejected.
//!
//! ```toml
//! schema_version = 1
//! name = "example"
//! duration_s = 2.5          # seconds, whole number of TTIs
//! seed = 7                  # optional; --seed and GRID5G_SEED also apply
//! mode = "5g"               # "ideal" | "5g"
//! sample_period_s = 0.001   # seconds, whole number of TTIs
//! substeps_per_tti = 20     # plant integration steps per TTI
//!
//! [ran]
//! aggregated_carriers = 2   # J
//! modulation_orders = [2, 4, 6, 8]
//! max_layers = 2            # MIMO layers
//! scaling_factor = 0.8
//! max_code_rate = 0.92578125
//! numerology = 2            # 0..=4
//! total_rbs = 3             # RBs per TTI at the gNodeB
//! rbs_per_der = 1
//! overhead = 0.08           # fraction
//! tti_s = 0.001
//! bsr_period_s = 0.001      # whole number of TTIs
//! packet_size_bytes = 150
//! bandwidth_hz = 5e6        # informational
//! carrier_freq_hz = 2.63e9  # informational
//! queue_cap = 1000          # packets per device, drop-oldest beyond
//! infinite_capacity = false # granted devices drain their whole queue
//!
//! [channel]
//! model = "iid_uniform"     # | "markov_step"
//! markov_stay_prob = 0.9
//! shared_cqi = false        # one CQI per device for all carriers
//!
//! [control]
//! scheme = "coordinated"    # | "frequency_partition"
//! cutoff_hz = 20.0          # frequency_partition only
//! local_gain = 1.0          # frequency_partition only
//!
//! [der_defaults]            # applied to every [[der]] before its own keys
//! gain = 4.0                # modulation gain m
//! pred_horizon_s = 1e-4
//! tau_s = 0.02              # plant time constant
//! initial_setpoint = 0.0    # per-unit
//! initial_output = 0.0      # per-unit
//! discretization = "exact"  # | "explicit"
//!
//! [[der]]                   # one table per device, ids 1, 2, ... in order
//! id = 1
//!
//! [topology]
//! kind = "all_to_all"       # | "none" | "explicit"
//! edges = [[1, 2, 1], [2, 1, 1]]  # explicit: [i, j, a_ij], a_ij = 1 if i
//!                                 # uses j's error; both directions required
//!
//! [[event]]
//! t_s = 0.5                 # on a TTI boundary
//! kind = "setpoint"         # | "link_fail" | "link_restore" | "disturbance"
//! ders = [1]
//! value = 1.0               # setpoint
//! # delta = -0.05           # disturbance, added to the device output
//! # both = false            # link events: also cut links into the device
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use grid5g_core::channel::{ChannelConfig, ChannelModel};
use grid5g_core::control::{Discretization, Topology};
use grid5g_core::scenario::{
    ControlScheme, DerSpec, Event, EventKind, Mode, PartitionConfig, Scenario,
};
use grid5g_core::DerId;

use crate::error::{CliError, Diagnostic, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum ModeName {
    #[serde(rename = "ideal")]
    Ideal,
    #[serde(rename = "5g")]
    FiveG,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Ideal => Mode::Ideal,
            ModeName::FiveG => Mode::FiveG,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub duration_s: f64,
    pub seed: Option<u64>,
    pub mode: Option<ModeName>,
    pub sample_period_s: Option<f64>,
    pub substeps_per_tti: Option<u32>,
    #[serde(default)]
    pub ran: RanSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub der_defaults: DerFields,
    #[serde(default)]
    pub der: Vec<DerEntry>,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub event: Vec<EventEntry>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RanSection {
    pub aggregated_carriers: Option<usize>,
    pub modulation_orders: Option<Vec<u8>>,
    pub max_layers: Option<u32>,
    pub scaling_factor: Option<f64>,
    pub max_code_rate: Option<f64>,
    pub numerology: Option<u8>,
    pub total_rbs: Option<u32>,
    pub rbs_per_der: Option<u32>,
    pub overhead: Option<f64>,
    pub tti_s: Option<f64>,
    pub bsr_period_s: Option<f64>,
    pub packet_size_bytes: Option<u32>,
    pub bandwidth_hz: Option<f64>,
    pub carrier_freq_hz: Option<f64>,
    pub queue_cap: Option<usize>,
    pub infinite_capacity: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModelName {
    IidUniform,
    MarkovStep,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub model: Option<ChannelModelName>,
    pub markov_stay_prob: Option<f64>,
    pub shared_cqi: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Coordinated,
    FrequencyPartition,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub scheme: Option<SchemeName>,
    pub cutoff_hz: Option<f64>,
    pub local_gain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscretizationName {
    Exact,
    Explicit,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerFields {
    pub gain: Option<f64>,
    pub pred_horizon_s: Option<f64>,
    pub tau_s: Option<f64>,
    pub initial_setpoint: Option<f64>,
    pub initial_output: Option<f64>,
    pub discretization: Option<DiscretizationName>,
}

impl DerFields {
    fn apply(&self, spec: &mut DerSpec) {
        if let Some(v) = self.gain {
            spec.gain = v;
        }
        if let Some(v) = self.pred_horizon_s {
            spec.pred_horizon = v;
        }
        if let Some(v) = self.tau_s {
            spec.tau = v;
        }
        if let Some(v) = self.initial_setpoint {
            spec.initial_setpoint = v;
        }
        if let Some(v) = self.initial_output {
            spec.initial_output = v;
        }
        if let Some(d) = self.discretization {
            spec.discretization = match d {
                DiscretizationName::Exact => Discretization::Exact,
                DiscretizationName::Explicit => Discretization::Explicit,
            };
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerEntry {
    pub id: Option<usize>,
    pub gain: Option<f64>,
    pub pred_horizon_s: Option<f64>,
    pub tau_s: Option<f64>,
    pub initial_setpoint: Option<f64>,
    pub initial_output: Option<f64>,
    pub discretization: Option<DiscretizationName>,
}

impl DerEntry {
    pub fn fields(&self) -> DerFields {
        DerFields {
            gain: self.gain,
            pred_horizon_s: self.pred_horizon_s,
            tau_s: self.tau_s,
            initial_setpoint: self.initial_setpoint,
            initial_output: self.initial_output,
            discretization: self.discretization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    AllToAll,
    None,
    Explicit,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: Option<TopologyKind>,
    pub edges: Option<Vec<[i64; 3]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKindName {
    Setpoint,
    LinkFail,
    LinkRestore,
    Disturbance,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventEntry {
    pub t_s: f64,
    pub kind: EventKindName,
    pub ders: Vec<usize>,
    pub value: Option<f64>,
    pub delta: Option<f64>,
    pub both: Option<bool>,
}

/// A parsed, validated scenario together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Seed given in the file, if any.
    pub file_seed: Option<u64>,
    pub source: String,
}

pub fn load(path: &Path) -> Result<LoadedScenario> {
    let source = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&source)
}

pub fn parse(source: &str) -> Result<LoadedScenario> {
    let file: ScenarioFile = toml::from_str(source).map_err(|e| {
        let line = e.span().map(|s| line_of_offset(source, s.start));
        CliError::Invalid(vec![diag_at(source, "file", e.message().trim(), line)])
    })?;
    let file_seed = file.seed;
    let scenario = build(&file).map_err(|diags| {
        CliError::Invalid(
            diags
                .into_iter()
                .map(|(field, message)| {
                    let line = locate(source, &field);
                    diag_at(source, &field, &message, line)
                })
                .collect(),
        )
    })?;
    Ok(LoadedScenario {
        scenario,
        file_seed,
        source: source.to_string(),
    })
}

fn diag_at(source: &str, field: &str, message: &str, line: Option<usize>) -> Diagnostic {
    Diagnostic {
        field: field.to_string(),
        message: message.to_string(),
        line,
        snippet: line.and_then(|l| source.lines().nth(l - 1)).map(|s| s.trim_end().to_string()),
    }
}

type Problems = Vec<(String, String)>;

fn build(file: &ScenarioFile) -> std::result::Result<Scenario, Problems> {
    let mut problems: Problems = Vec::new();
    if file.schema_version != SCHEMA_VERSION {
        problems.push((
            "schema_version".into(),
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", file.schema_version),
        ));
    }
    if file.der.is_empty() {
        problems.push(("der".into(), "at least one [[der]] table is required".into()));
    }

    let n = file.der.len();
    let mut scenario = Scenario::coordinated(file.name.clone(), n, file.duration_s);
    if let Some(mode) = file.mode {
        scenario.mode = mode.into();
    }
    scenario.seed = file.seed.unwrap_or(scenario.seed);
    if let Some(v) = file.sample_period_s {
        scenario.sample_period = v;
    }
    if let Some(v) = file.substeps_per_tti {
        scenario.substeps_per_tti = v;
    }
    apply_ran(&file.ran, &mut scenario);
    apply_channel(&file.channel, &mut scenario.channel);
    apply_control(&file.control, &mut scenario, &mut problems);

    for (i, entry) in file.der.iter().enumerate() {
        if let Some(id) = entry.id {
            if id != i + 1 {
                problems.push((
                    format!("der[{}].id", i + 1),
                    format!("device ids must run 1, 2, ... in file order; expected {}, got {id}", i + 1),
                ));
            }
        }
        let spec = &mut scenario.ders[i];
        file.der_defaults.apply(spec);
        entry.fields().apply(spec);
    }

    match build_topology(&file.topology, n) {
        Ok(t) => scenario.topology = t,
        Err(p) => problems.extend(p),
    }

    for (i, ev) in file.event.iter().enumerate() {
        match build_events(ev, i + 1, n) {
            Ok(evs) => scenario.events.extend(evs),
            Err(p) => problems.extend(p),
        }
    }

    if problems.is_empty() {
        problems.extend(scenario.violations().into_iter().map(|v| (v.field, v.message)));
    }
    if problems.is_empty() {
        Ok(scenario)
    } else {
        Err(problems)
    }
}

fn apply_ran(s: &RanSection, sc: &mut Scenario) {
    let r = &mut sc.ran;
    macro_rules! set {
        ($($src:ident => $dst:ident),* $(,)?) => {
            $(if let Some(v) = s.$src.clone() { r.$dst = v; })*
        };
    }
    set!(
        aggregated_carriers => aggregated_carriers,
        modulation_orders => modulation_orders,
        max_layers => max_layers,
        scaling_factor => scaling_factor,
        max_code_rate => max_code_rate,
        numerology => numerology,
        total_rbs => total_rbs,
        rbs_per_der => rbs_per_der,
        overhead => overhead,
        tti_s => tti,
        bsr_period_s => bsr_period,
        packet_size_bytes => packet_size,
        bandwidth_hz => bandwidth,
        carrier_freq_hz => carrier_freq,
        queue_cap => queue_cap,
        infinite_capacity => infinite_capacity,
    );
}

fn apply_channel(s: &ChannelSection, c: &mut ChannelConfig) {
    if let Some(m) = s.model {
        c.model = match m {
            ChannelModelName::IidUniform => ChannelModel::IidUniform,
            ChannelModelName::MarkovStep => ChannelModel::MarkovStep,
        };
    }
    if let Some(p) = s.markov_stay_prob {
        c.markov_stay_prob = p;
    }
    if let Some(b) = s.shared_cqi {
        c.shared_cqi = b;
    }
}

fn apply_control(s: &ControlSection, sc: &mut Scenario, problems: &mut Problems) {
    match s.scheme.unwrap_or(SchemeName::Coordinated) {
        SchemeName::Coordinated => {
            for (key, present) in [("cutoff_hz", s.cutoff_hz.is_some()), ("local_gain", s.local_gain.is_some())] {
                if present {
                    problems.push((
                        format!("control.{key}"),
                        "only used with scheme = \"frequency_partition\"".into(),
                    ));
                }
            }
        }
        SchemeName::FrequencyPartition => {
            let d = PartitionConfig::default();
            sc.control = ControlScheme::FrequencyPartition(PartitionConfig {
                cutoff_hz: s.cutoff_hz.unwrap_or(d.cutoff_hz),
                local_gain: s.local_gain.unwrap_or(d.local_gain),
            });
        }
    }
}

fn build_topology(s: &TopologySection, n: usize) -> std::result::Result<Topology, Problems> {
    let kind = s.kind.unwrap_or(if s.edges.is_some() {
        TopologyKind::Explicit
    } else {
        TopologyKind::AllToAll
    });
    let mut problems = Problems::new();
    match kind {
        TopologyKind::AllToAll | TopologyKind::None if s.edges.is_some() => {
            problems.push((
                "topology.edges".into(),
                "edges are only allowed with kind = \"explicit\"".into(),
            ));
        }
        TopologyKind::AllToAll => return Ok(Topology::all_to_all(n)),
        TopologyKind::None => return Ok(Topology::isolated(n)),
        TopologyKind::Explicit => {}
    }
    if !problems.is_empty() {
        return Err(problems);
    }
    let edges = s.edges.as_deref().unwrap_or_default();
    let mut given: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for [i, j, a] in edges.iter().copied() {
        let in_range = |x: i64| x >= 1 && (x as usize) <= n;
        if !in_range(i) || !in_range(j) {
            problems.push((
                "topology.edges".into(),
                format!("edge [{i}, {j}, {a}] names a device outside 1..={n}"),
            ));
            continue;
        }
        if i == j {
            problems.push(("topology.edges".into(), format!("self edge [{i}, {j}, {a}]")));
            continue;
        }
        if a != 0 && a != 1 {
            problems.push((
                "topology.edges".into(),
                format!("a_{i}{j} must be 0 or 1, got {a}"),
            ));
            continue;
        }
        if given.insert((i as usize, j as usize), a == 1).is_some() {
            problems.push(("topology.edges".into(), format!("a_{i}{j} given twice")));
        }
    }
    for (&(i, j), &a) in &given {
        if !given.contains_key(&(j, i)) {
            problems.push((
                "topology.edges".into(),
                format!(
                    "a_{i}{j} = {} is given but a_{j}{i} is not; list both directions explicitly",
                    u8::from(a)
                ),
            ));
        }
    }
    if !problems.is_empty() {
        return Err(problems);
    }
    let mut adjacency = vec![vec![false; n]; n];
    for ((i, j), a) in given {
        adjacency[i - 1][j - 1] = a;
    }
    Topology::from_adjacency(adjacency).map_err(|e| vec![("topology".into(), e.to_string())])
}

fn build_events(ev: &EventEntry, pos: usize, n: usize) -> std::result::Result<Vec<Event>, Problems> {
    let field = |k: &str| format!("event[{pos}].{k}");
    let mut problems = Problems::new();
    if ev.ders.is_empty() {
        problems.push((field("ders"), "event names no device".into()));
    }
    let mut seen = BTreeSet::new();
    for &d in &ev.ders {
        if d == 0 || d > n {
            problems.push((field("ders"), format!("unknown device {d} (scenario has {n})")));
        } else if !seen.insert(d) {
            problems.push((field("ders"), format!("device {d} listed twice")));
        }
    }
    let allowed: &[&str] = match ev.kind {
        EventKindName::Setpoint => &["value"],
        EventKindName::Disturbance => &["delta"],
        EventKindName::LinkFail | EventKindName::LinkRestore => &["both"],
    };
    for (key, present) in [
        ("value", ev.value.is_some()),
        ("delta", ev.delta.is_some()),
        ("both", ev.both.is_some()),
    ] {
        if present && !allowed.contains(&key) {
            problems.push((field(key), format!("not used by {:?} events", ev.kind)));
        }
    }
    let ders: Vec<DerId> = ev.ders.iter().map(|&d| DerId(d.saturating_sub(1))).collect();
    let kinds = match ev.kind {
        EventKindName::Setpoint => match ev.value {
            Some(value) => vec![EventKind::Setpoint { ders, value }],
            None => {
                problems.push((field("value"), "setpoint events need a value".into()));
                vec![]
            }
        },
        EventKindName::Disturbance => match ev.delta {
            Some(delta) => vec![EventKind::Disturbance { ders, delta }],
            None => {
                problems.push((field("delta"), "disturbance events need a delta".into()));
                vec![]
            }
        },
        EventKindName::LinkFail => ders
            .into_iter()
            .map(|der| EventKind::LinkFail {
                der,
                both: ev.both.unwrap_or(false),
            })
            .collect(),
        EventKindName::LinkRestore => ders
            .into_iter()
            .map(|der| EventKind::LinkRestore {
                der,
                both: ev.both.unwrap_or(false),
            })
            .collect(),
    };
    if problems.is_empty() {
        Ok(kinds.into_iter().map(|kind| Event { time: ev.t_s, kind }).collect())
    } else {
        Err(problems)
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Best-effort line for a field path such as `ran.tti_s`, `der[2].tau_s` or
/// `duration_s`: the key's own line when present, else its table header.
pub fn locate(source: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.split_once('.') {
        Some((t, k)) => (Some(t), k),
        None => (None, field),
    };
    let (table_name, index) = match table {
        Some(t) => match t.split_once('[') {
            Some((name, rest)) => (Some(name), rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (Some(t), None),
        },
        None => (None, None),
    };
    // Top-level names that are tables, like `topology`.
    let (table_name, key) = match (table_name, source_has_table(source, key)) {
        (None, true) => (Some(key), ""),
        other => (other.0, key),
    };

    let mut current: Option<String> = None;
    let mut array_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut current_index: Option<usize> = None;
    let mut header_line = None;
    for (no, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("[[").and_then(|l| l.split("]]").next()) {
            let name = name.trim().to_string();
            let c = array_counts.entry(name.clone()).or_insert(0);
            *c += 1;
            current_index = Some(*c);
            current = Some(name);
        } else if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = Some(name.trim().to_string());
            current_index = None;
        } else {
            let in_target = current.as_deref() == table_name && (index.is_none() || current_index == index);
            if in_target && !key.is_empty() && starts_with_key(line, key) {
                return Some(no + 1);
            }
            continue;
        }
        if current.as_deref() == table_name && (index.is_none() || current_index == index) && header_line.is_none() {
            header_line = Some(no + 1);
        }
    }
    header_line
}

fn source_has_table(source: &str, name: &str) -> bool {
    source.lines().any(|l| {
        let l = l.trim();
        l == format!("[{name}]") || l == format!("[[{name}]]")
    })
}

fn starts_with_key(line: &str, key: &str) -> bool {
    line.strip_prefix(key)
        .map(|rest| rest.trim_start().starts_with('='))
        .unwrap_or(false)
}
