//! File formats, presets and operator commands for the grid5g co-simulator.
//!
//! The simulation itself lives in `grid5g-core`; this crate reads scenario
//! files, writes trace CSVs and run manifests, computes step-response reports
//! and serves the external plant bridge.

pub mod bridge;
pub mod error;
pub mod report;
pub mod scenario_file;
pub mod trace;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use grid5g_core::engine::{Engine, TraceRecord};
use grid5g_core::scenario::{Mode, Scenario};

pub use error::{CliError, Diagnostic, Result};
pub use scenario_file::LoadedScenario;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "GRID5G_SEED";
pub const DEFAULT_SEED: u64 = 1;
pub const TRACE_FILE: &str = "trace.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub mod presets {
    pub const ALL: &[(&str, &str)] = &[
        ("cspm_staggered", include_str!("../presets/cspm_staggered.toml")),
        ("cspm_simultaneous", include_str!("../presets/cspm_simultaneous.toml")),
        ("cspm_comm_failure", include_str!("../presets/cspm_comm_failure.toml")),
        ("power_park", include_str!("../presets/power_park.toml")),
    ];

    pub fn get(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, src)| *src)
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        ALL.iter().map(|(n, _)| *n)
    }
}

/// Where a scenario comes from: a file, or `preset:NAME`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Preset(String),
}

impl Source {
    pub fn parse(arg: &str) -> Self {
        match arg.strip_prefix("preset:") {
            Some(name) => Source::Preset(name.to_string()),
            None => Source::File(PathBuf::from(arg)),
        }
    }

    pub fn load(&self) -> Result<LoadedScenario> {
        match self {
            Source::File(path) => scenario_file::load(path),
            Source::Preset(name) => {
                let src = presets::get(name).ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown preset {name:?}; available: {}",
                        presets::names().collect::<Vec<_>>().join(", ")
                    ))
                })?;
                scenario_file::parse(src)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Source::File(p) => p.display().to_string(),
            Source::Preset(n) => format!("preset:{n}"),
        }
    }
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "ideal" => Ok(Mode::Ideal),
        "5g" => Ok(Mode::FiveG),
        _ => Err(CliError::Usage(format!("unknown mode {s:?} (expected ideal or 5g)"))),
    }
}

/// Seed precedence: flag, then the scenario file, then the environment.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(DEFAULT_SEED),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketCounters {
    pub generated: u64,
    pub delivered: u64,
    pub queued: u64,
    pub dropped: u64,
}

impl PacketCounters {
    pub fn of(engine: &Engine) -> Self {
        engine.ders().iter().fold(Self::default(), |acc, d| Self {
            generated: acc.generated + d.queue.generated,
            delivered: acc.delivered + d.queue.delivered,
            queued: acc.queued + d.queue.len() as u64,
            dropped: acc.dropped + d.queue.dropped,
        })
    }
}

/// Everything needed to reproduce a run, plus a few summary counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub scenario: String,
    pub scenario_name: String,
    pub scenario_sha256: String,
    pub seed: u64,
    pub mode: String,
    pub bridge: bool,
    pub tti_s: f64,
    pub sample_period_s: f64,
    pub duration_s: f64,
    pub completed_ttis: u64,
    pub records: usize,
    pub trace: String,
    pub packets: PacketCounters,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp_unix: u64,
}

/// A finished (or interrupted) run held in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub records: Vec<TraceRecord>,
    pub completed_ttis: u64,
    pub packets: PacketCounters,
}

impl RunOutput {
    pub fn trace(&self) -> trace::Trace {
        trace::Trace::new(
            self.scenario.n_ders(),
            self.scenario.ran.aggregated_carriers,
            self.records.clone(),
        )
    }
}

/// Applies command-line overrides to a loaded scenario.
pub fn prepare(loaded: &LoadedScenario, seed: Option<u64>, mode: Option<Mode>) -> Result<Scenario> {
    let env = std::env::var(SEED_ENV).ok();
    let mut scenario = loaded.scenario.clone();
    scenario.seed = resolve_seed(seed, loaded.file_seed, env.as_deref())?;
    if let Some(m) = mode {
        scenario.mode = m;
    }
    Ok(scenario)
}

pub fn simulate(scenario: Scenario) -> Result<RunOutput> {
    let mut engine = Engine::new(scenario.clone())?;
    let records = engine.run_to_end()?;
    Ok(RunOutput {
        completed_ttis: engine.clock().tti_index,
        packets: PacketCounters::of(&engine),
        scenario,
        records,
    })
}

pub fn manifest(source: &LoadedScenario, label: &str, out: &RunOutput, bridge: bool) -> Manifest {
    let s = &out.scenario;
    Manifest {
        version: VERSION.to_string(),
        scenario: label.to_string(),
        scenario_name: s.name.clone(),
        scenario_sha256: sha256_hex(source.source.as_bytes()),
        seed: s.seed,
        mode: s.mode.as_str().to_string(),
        bridge,
        tti_s: s.ran.tti,
        sample_period_s: s.sample_period,
        duration_s: s.duration,
        completed_ttis: out.completed_ttis,
        records: out.records.len(),
        trace: TRACE_FILE.to_string(),
        packets: out.packets,
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    }
}

/// Writes `trace.csv` and `manifest.toml` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, out: &RunOutput, manifest: &Manifest) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let trace_path = dir.join(TRACE_FILE);
    let f = std::fs::File::create(&trace_path).map_err(|e| CliError::io(&trace_path, e))?;
    trace::write_csv(
        std::io::BufWriter::new(f),
        out.scenario.n_ders(),
        out.scenario.ran.aggregated_carriers,
        &out.records,
    )?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = toml::to_string(manifest).map_err(|e| CliError::Runtime(format!("manifest: {e}")))?;
    std::fs::write(&manifest_path, text).map_err(|e| CliError::io(&manifest_path, e))?;
    Ok(trace_path)
}
