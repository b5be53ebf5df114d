use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uav_coalition::beamforming::{optimize_snr, BisectionOptions, ChannelState};
use uav_coalition::error::Result;
use uav_coalition::harness::{run_baseline, run_simulation};
use uav_coalition::output::{read_events, write_outputs, Format, Method, Tables};
use uav_coalition::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "uavsim", version, about = "Coalition formation and relay beamforming for UAV task allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-round simulation.
    Run(RunArgs),
    /// Run a single round.
    NegotiateOnce(CommonArgs),
    /// Solve one beamforming instance from a JSON channel file.
    SolveBeam(BeamArgs),
    /// Run only the nearest-UAV assignment.
    Baseline(RunArgs),
    /// Recompute the tables from a saved event trace.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Table format: csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Absolute bisection precision on the SNR.
    #[arg(long)]
    precision: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 25)]
    rounds: u64,
}

#[derive(Args)]
struct BeamArgs {
    /// JSON file with `channels` and `power_caps`.
    #[arg(long)]
    channels: PathBuf,
    #[arg(long)]
    precision: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Event trace written by `run`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value = "csv")]
    format: Format,
}

#[derive(Deserialize)]
struct BeamInstance {
    channels: ChannelState,
    power_caps: Vec<f64>,
}

#[derive(Serialize)]
struct BeamReport {
    snr: f64,
    t_up: f64,
    iterations: usize,
    weights: Vec<[f64; 2]>,
}

fn load_config(args: &CommonArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.precision.is_some() {
        cfg.precision = args.precision;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(tables: &Tables, out: &Path) {
    let show = |m: Method| {
        tables
            .mean_efficiency(m)
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
    };
    println!(
        "mean efficiency factor: proposed {}, baseline {}",
        show(Method::Proposed),
        show(Method::Baseline)
    );
    println!("outputs written to {}", out.display());
}

fn simulate(common: &CommonArgs, rounds: u64) -> Result<()> {
    let cfg = load_config(common)?;
    let sim = run_simulation(&cfg, rounds)?;
    let tables = write_outputs(&common.out, &sim.events, common.format)?;
    let served: usize = sim.reports.iter().map(|r| r.served.len()).sum();
    let total: usize = sim.reports.iter().map(|r| r.served.len() + r.failed.len()).sum();
    println!("served {served} of {total} tasks over {rounds} rounds");
    summarize(&tables, &common.out);
    Ok(())
}

fn solve_beam(args: &BeamArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.channels)?;
    let instance: BeamInstance = serde_json::from_str(&text)?;
    let opts = BisectionOptions {
        precision: args.precision,
        ..BisectionOptions::default()
    };
    let sol = optimize_snr(&instance.channels, &instance.power_caps, &opts)?;
    let report = BeamReport {
        snr: sol.snr,
        t_up: sol.t_up,
        iterations: sol.iterations,
        weights: sol.weights.iter().map(|w| [w.re, w.im]).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => simulate(&args.common, args.rounds),
        Command::NegotiateOnce(common) => simulate(&common, 1),
        Command::SolveBeam(args) => solve_beam(&args),
        Command::Baseline(args) => {
            let cfg = load_config(&args.common)?;
            let log = run_baseline(&cfg, args.rounds)?;
            let tables = write_outputs(&args.common.out, &log, args.common.format)?;
            summarize(&tables, &args.common.out);
            Ok(())
        }
        Command::Report(args) => {
            let log = read_events(&args.input)?;
            let tables = Tables::from_events(&log)?;
            tables.write(&args.out, args.format)?;
            summarize(&tables, &args.out);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
