use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grid5g::bridge;
use grid5g::report::{self, compare_table, measure, metrics_text, parse_step};
use grid5g::{manifest, parse_mode, prepare, presets, simulate, write_run, CliError, Result, RunOutput, Source};
use grid5g_core::engine::Engine;
use grid5g_core::metrics::{Settling, StepSpec, DEFAULT_BAND};
use grid5g_core::scenario::Mode;

/// Lock-step co-simulation of a 5G uplink and networked grid-device control.
///
/// Scenarios are TOML files, or `preset:NAME` for a bundled one (see
/// `grid5g presets`). Exit status: 0 success, 2 invalid input, 3 runtime
/// failure, 4 bridge protocol violation.
#[derive(Parser)]
#[command(name = "grid5g", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and list every problem found.
    Validate { scenario: String },
    /// Run a scenario and write trace.csv and manifest.toml.
    Simulate {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Overshoot, settling time and stability of a trace column per step.
    Metrics {
        trace: PathBuf,
        #[command(flatten)]
        steps: StepArgs,
        /// Report file; defaults to the trace path with a .metrics.txt extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail when any step never settles.
        #[arg(long)]
        require_settled: bool,
    },
    /// Side-by-side table for an ideal and a 5G trace of the same scenario.
    Compare {
        ideal: PathBuf,
        five_g: PathBuf,
        #[command(flatten)]
        steps: StepArgs,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the plant bridge: an external peer integrates the plants.
    Bridge {
        scenario: String,
        /// `stdio`, or `tcp:HOST:PORT` (port 0 picks a free one; the bound
        /// address is printed on stderr).
        #[arg(long)]
        listen: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// List bundled presets, or print one.
    Presets { name: Option<String> },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Overrides the scenario seed; GRID5G_SEED applies when neither is set.
    #[arg(long)]
    seed: Option<u64>,
    /// `ideal` or `5g`; overrides the scenario.
    #[arg(long, value_parser = parse_mode_arg)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct StepArgs {
    /// `t0:y0:y1[:t_end]`, repeatable. Values may be fractions such as 1/3.
    #[arg(long = "step", required = true)]
    steps: Vec<String>,
    /// Settling band as a fraction of the step size.
    #[arg(long, default_value_t = DEFAULT_BAND)]
    band: f64,
    /// Trace column to analyze.
    #[arg(long, default_value = "pcc")]
    column: String,
}

impl StepArgs {
    fn specs(&self) -> Result<Vec<StepSpec>> {
        self.steps.iter().map(|s| parse_step(s, self.band)).collect()
    }
}

fn parse_mode_arg(s: &str) -> std::result::Result<Mode, String> {
    parse_mode(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Validate { scenario } => {
            let source = Source::parse(&scenario);
            let loaded = source.load()?;
            println!(
                "{}: ok ({} devices, {} TTIs, {} events)",
                source.label(),
                loaded.scenario.n_ders(),
                loaded.scenario.total_ttis(),
                loaded.scenario.events.len()
            );
            Ok(())
        }
        Command::Simulate { scenario, run } => {
            let source = Source::parse(&scenario);
            let loaded = source.load()?;
            let out = simulate(prepare(&loaded, run.seed, run.mode)?)?;
            let m = manifest(&loaded, &source.label(), &out, false);
            let path = write_run(&run.out, &out, &m)?;
            println!(
                "{} records, seed {}, mode {} -> {}",
                out.records.len(),
                m.seed,
                m.mode,
                path.display()
            );
            Ok(())
        }
        Command::Metrics {
            trace,
            steps,
            out,
            require_settled,
        } => {
            let specs = steps.specs()?;
            let t = grid5g::trace::read_file(&trace)?;
            let reports = measure(&t, &steps.column, &specs)?;
            let text = metrics_text(&t, &steps.column, steps.band, &specs, &reports);
            print!("{text}");
            let out = out.unwrap_or_else(|| trace.with_extension("metrics.txt"));
            std::fs::write(&out, &text).map_err(|e| CliError::io(&out, e))?;
            let unsettled = reports.iter().filter(|r| r.settling == Settling::NotSettled).count();
            if require_settled && unsettled > 0 {
                return Err(CliError::Runtime(format!("{unsettled} step(s) NOT_SETTLED")));
            }
            Ok(())
        }
        Command::Compare {
            ideal,
            five_g,
            steps,
            out,
        } => {
            let specs = steps.specs()?;
            let a = grid5g::trace::read_file(&ideal)?;
            let b = grid5g::trace::read_file(&five_g)?;
            report::check_comparable(&a, &b)?;
            let ra = measure(&a, &steps.column, &specs).map_err(|e| labelled(e, &ideal))?;
            let rb = measure(&b, &steps.column, &specs).map_err(|e| labelled(e, &five_g))?;
            let text = compare_table(steps.band, &specs, &ra, &rb);
            print!("{text}");
            if let Some(out) = out {
                std::fs::write(&out, &text).map_err(|e| CliError::io(&out, e))?;
            }
            Ok(())
        }
        Command::Bridge { scenario, listen, run } => bridge_cmd(&scenario, &listen, run),
        Command::Presets { name: None } => {
            for n in presets::names() {
                println!("{n}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            let src = presets::get(&name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?;
            print!("{src}");
            Ok(())
        }
    }
}

fn labelled(e: CliError, path: &Path) -> CliError {
    match e {
        CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn bridge_cmd(scenario: &str, listen: &str, run: RunArgs) -> Result<()> {
    let source = Source::parse(scenario);
    let loaded = source.load()?;
    let resolved = prepare(&loaded, run.seed, run.mode)?;
    let mut engine = Engine::new(resolved.clone())?;

    let session = if listen == "stdio" {
        let stdin = std::io::stdin();
        bridge::serve(&mut engine, stdin.lock(), std::io::stdout().lock())
    } else {
        let addr = listen.strip_prefix("tcp:").unwrap_or(listen);
        let listener = TcpListener::bind(addr).map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        let bound = listener
            .local_addr()
            .map_err(|e| CliError::Runtime(format!("cannot bind {addr}: {e}")))?;
        eprintln!("listening on {bound}");
        let _ = std::io::stderr().flush();
        let (stream, peer) = listener
            .accept()
            .map_err(|e| CliError::Runtime(format!("accept failed: {e}")))?;
        eprintln!("peer connected from {peer}");
        stream
            .set_nodelay(true)
            .map_err(|e| CliError::Runtime(format!("socket: {e}")))?;
        let reader = stream
            .try_clone()
            .map_err(|e| CliError::Runtime(format!("socket: {e}")))?;
        bridge::serve(&mut engine, BufReader::new(reader), stream)
    };

    let out = RunOutput {
        scenario: resolved,
        records: session.records,
        completed_ttis: session.completed_ttis,
        packets: grid5g::PacketCounters::of(&engine),
    };
    let m = manifest(&loaded, &source.label(), &out, true);
    let path = write_run(&run.out, &out, &m)?;
    eprintln!(
        "{} of {} TTIs, {} records -> {}",
        out.completed_ttis,
        engine.total_ttis(),
        out.records.len(),
        path.display()
    );
    session.result
}
