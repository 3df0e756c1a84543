//! `junction-sim`: run scenarios, parameter sweeps and the safety suites.

mod exit;
mod run;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mixed_junction::hv_driver::HvMode;
use mixed_junction::sim_engine::trace::TraceLevel;
use mixed_junction::sim_engine::Mutation;

#[derive(Debug, Parser)]
#[command(name = "junction-sim", version, about = "Mixed-traffic signalized junction simulator")]
struct Cli {
    /// More progress output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario file and write trace, safety report and metrics.
    Run(RunArgs),
    /// Run the safety suites and print a pass/fail matrix.
    Verify(VerifyArgs),
    /// Simulate a grid of human-driver shares and demands.
    Sweep(SweepArgs),
}

/// Options shared by every command that simulates.
#[derive(Debug, Args)]
struct SimArgs {
    /// Override the scenario's horizon (slots).
    #[arg(long)]
    horizon: Option<u64>,
    /// Override the scenario's human-driver behaviour.
    #[arg(long, value_enum)]
    hv_mode: Option<HvModeArg>,
    /// Deliberate defect, for checking that the safety checks fire.
    #[arg(long, value_enum, hide = true)]
    mutate: Option<MutationArg>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Seeds to run, as a list (`1,2,5`) and/or ranges (`0..4`).
    #[arg(long, short, default_value = "0", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Directory for the output files; created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "events")]
    trace: TraceArg,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Brute-force episodes per follow-distance formula.
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    /// Random planner states for the feasibility check.
    #[arg(long, default_value_t = 10_000)]
    states: usize,
    /// Seeds per cell of the randomized traffic batch.
    #[arg(long, default_value_t = 7)]
    batch_seeds: u64,
    /// Slots per batch scenario.
    #[arg(long, default_value_t = 1000)]
    batch_horizon: u64,
    /// Parallel simulations (defaults to the number of CPUs).
    #[arg(long, short)]
    workers: Option<usize>,
    #[arg(long, value_enum, hide = true)]
    mutate: Option<MutationArg>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Base scenario (TOML) with Poisson arrivals; the built-in junction if omitted.
    scenario: Option<PathBuf>,
    /// Human-driver shares, as a list (`0,0.5,1`) or `start:end:step`.
    #[arg(long, default_value = "0:1:0.25", value_parser = parse_axis)]
    hv_fractions: Axis,
    /// Arrival rates per path (1/s), as a list or `start:end:step`; defaults
    /// to the scenario's rate.
    #[arg(long, value_parser = parse_axis)]
    rates: Option<Axis>,
    #[arg(long, short, default_value = "0..5", value_parser = parse_seeds)]
    seeds: Seeds,
    /// Output CSV file.
    #[arg(long, short, default_value = "sweep.csv")]
    out: PathBuf,
    #[arg(long, short)]
    workers: Option<usize>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum HvModeArg {
    Nominal,
    Randomized,
    Adversarial,
}

impl From<HvModeArg> for HvMode {
    fn from(m: HvModeArg) -> Self {
        match m {
            HvModeArg::Nominal => HvMode::Nominal,
            HvModeArg::Randomized => HvMode::Randomized,
            HvModeArg::Adversarial => HvMode::Adversarial,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TraceArg {
    Off,
    Events,
    Full,
}

impl From<TraceArg> for TraceLevel {
    fn from(t: TraceArg) -> Self {
        match t {
            TraceArg::Off => TraceLevel::Off,
            TraceArg::Events => TraceLevel::Events,
            TraceArg::Full => TraceLevel::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MutationArg {
    /// Grant permissions without checking for crossing paths.
    NoConflictCheck,
    /// Halve the response-time coefficient of the human-lead follow distance.
    HvCoefficientHalved,
    /// Shrink the AV-behind-AV distance by 20 %.
    WeakenAvAv,
    /// Shrink the AV-behind-HV distance by 20 %.
    WeakenAvHv,
    /// Shrink the HV-limited-behind-HV distance by 20 %.
    WeakenHvHv,
    /// Shrink the HV-limited-behind-AV distance by 20 %.
    WeakenHvAv,
    /// Shrink the human follow distance by 20 %.
    WeakenHuman,
}

impl From<MutationArg> for Mutation {
    fn from(m: MutationArg) -> Self {
        let weaken = |index| Mutation::WeakenFormula { index, factor: 0.8 };
        match m {
            MutationArg::NoConflictCheck => Mutation::NoConflictCheck,
            MutationArg::HvCoefficientHalved => Mutation::HvHvCoefficientHalved,
            MutationArg::WeakenAvAv => weaken(0),
            MutationArg::WeakenAvHv => weaken(1),
            MutationArg::WeakenHvHv => weaken(2),
            MutationArg::WeakenHvAv => weaken(3),
            MutationArg::WeakenHuman => weaken(4),
        }
    }
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

/// `1,2,5`, `0..4` (end exclusive) or any comma-separated mix.
fn parse_seeds(text: &str) -> Result<Seeds, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|e| format!("bad seed range {part:?}: {e}"))?;
            let b: u64 = b.parse().map_err(|e| format!("bad seed range {part:?}: {e}"))?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|e| format!("bad seed {part:?}: {e}"))?);
        }
    }
    Ok(Seeds(seeds))
}

#[derive(Clone, Debug)]
struct Axis(Vec<f64>);

/// A comma-separated list, or `start:end:step` with both ends included.
fn parse_axis(text: &str) -> Result<Axis, String> {
    let number = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
    let parts: Vec<&str> = text.split(':').collect();
    if let [start, end, step] = parts[..] {
        let (start, end, step) = (number(start)?, number(end)?, number(step)?);
        if step.is_nan() || step <= 0.0 {
            return Err(format!("step must be positive, got {step}"));
        }
        let count = ((end - start) / step + 1e-9).floor();
        if count < 0.0 {
            return Ok(Axis(Vec::new()));
        }
        return Ok(Axis((0..=count as usize).map(|i| start + i as f64 * step).collect()));
    }
    let values = text.split(',').filter(|p| !p.trim().is_empty()).map(number).collect::<Result<_, _>>()?;
    Ok(Axis(values))
}

fn init_workers(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run::execute(&args, cli.verbose),
        Command::Verify(args) => verify::execute(&args, cli.verbose),
        Command::Sweep(args) => sweep::execute(&args, cli.verbose),
    };
    match result {
        Ok(status) => status.into(),
        Err(err) => {
            eprintln!("error: {err:#}");
            exit::classify(&err).into()
        }
    }
}
