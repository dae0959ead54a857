use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uavlink_core::config::{load_config, ConfigError, ScenarioConfig};
use uavlink_core::harness::{self, HarnessError, PlotKind, RunResult};

/// Cellular UAV link emulator: CC and video sessions over an emulated LTE
/// path, with sweeps and plot-ready output.
#[derive(Debug, Parser)]
#[command(name = "uavlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Overrides {
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing the config's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run length in seconds, replacing the config's.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a config that names a single scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every combination of the config's sweep lists.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Turn a results directory into plot-ready series.
    Plotdata {
        results_dir: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: PlotKind,
    },
}

fn parse_kind(s: &str) -> Result<PlotKind, String> {
    s.parse()
}

// Exit codes by failure category; clap itself exits with 2 on usage errors.
const EXIT_CONFIG_MISSING: u8 = 3;
const EXIT_CONFIG_PARSE: u8 = 4;
const EXIT_CONFIG_INVALID: u8 = 5;
const EXIT_IO: u8 = 6;
const EXIT_METRIC: u8 = 7;
const EXIT_RESULTS: u8 = 8;

fn exit_code(e: &HarnessError) -> u8 {
    match e {
        HarnessError::Config(ConfigError::Missing { .. }) => EXIT_CONFIG_MISSING,
        HarnessError::Config(ConfigError::Parse { .. }) => EXIT_CONFIG_PARSE,
        HarnessError::Config(ConfigError::Invalid(_)) => EXIT_CONFIG_INVALID,
        HarnessError::Io { .. } => EXIT_IO,
        HarnessError::Metric { .. } => EXIT_METRIC,
        HarnessError::Results { .. } | HarnessError::Plot(_) => EXIT_RESULTS,
    }
}

fn load(path: &Path, o: &Overrides) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = load_config(path)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.outputs.dir = out.clone();
    }
    if let Some(d) = o.duration {
        cfg.duration_s = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(r: &RunResult) {
    let row = r.summary_row();
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{}: seed={} delay_avg_us={} reliability={} throughput_bps={} segment_loss={}",
        row.scenario_id,
        row.seed,
        opt(row.delay_avg_us),
        opt(row.reliability),
        opt(row.throughput_avg_bps),
        opt(row.segment_loss_frac),
    );
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let r = harness::run_config(&cfg, Some(&cfg.outputs.dir))?;
            report(&r);
            println!("results in {}", cfg.outputs.dir.display());
        }
        Command::Sweep { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let results = harness::sweep(&cfg, Some(&cfg.outputs.dir))?;
            for r in &results {
                report(r);
            }
            println!("{} runs; results in {}", results.len(), cfg.outputs.dir.display());
        }
        Command::Plotdata { results_dir, kind } => {
            let path = harness::emit_plotdata(&results_dir, kind)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
