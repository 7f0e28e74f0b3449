//! `voltzone`: run the zonal Volt/VAR pipeline stage by stage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voltzone::ErrorClass;

use crate::config::ModeName;

#[derive(Debug, Parser)]
#[command(
    name = "voltzone",
    version,
    about = "Zonal two-stage Volt/VAR studies on radial feeders"
)]
struct Cli {
    /// Configuration document (TOML) with one table per subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct FeederArg {
    /// Feeder document (JSON).
    #[arg(long)]
    feeder: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a feeder (and optionally a profile file against it).
    Validate {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        profiles: Option<PathBuf>,
    },
    /// Solve one operating point and write per-node voltages as CSV.
    Powerflow {
        #[command(flatten)]
        feeder: FeederArg,
        /// Read loads and PV from this profile file at `--minute`.
        #[arg(long, requires = "minute")]
        profiles: Option<PathBuf>,
        #[arg(long)]
        minute: Option<usize>,
        /// Load multiplier on nominal demand when no profiles are given.
        #[arg(long, default_value_t = 1.0)]
        load_mult: f64,
        /// PV multiplier on rated output when no profiles are given.
        #[arg(long, default_value_t = 0.0)]
        pv_mult: f64,
        /// Let the regulators settle under local control first.
        #[arg(long)]
        settle: bool,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reactive-power sensitivity and correlation matrices.
    Sensitivity {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        delta_q_kvar: Option<f64>,
        #[arg(long, value_enum)]
        mode: Option<ModeName>,
        #[arg(long)]
        workers: Option<usize>,
        /// Directory for sensitivity.json, vlsm.csv and correlation.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cluster load nodes into inverter zones.
    Partition {
        #[command(flatten)]
        feeder: FeederArg,
        /// sensitivity.json written by `sensitivity`.
        #[arg(long)]
        sensitivity: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo screening for the critical nodes of every zone.
    CriticalNodes {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Occurrence threshold, percent of runs.
        #[arg(long)]
        th_percent: Option<f64>,
        /// Voltage-difference threshold, pu.
        #[arg(long)]
        delta_v_th: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quasi-static time-series simulation under local or coordinated control.
    Simulate {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Stagger regulator delays outwards from the substation (75/90/105 s).
        #[arg(long)]
        staggered_delays: bool,
        #[arg(long)]
        sensitivity: Option<PathBuf>,
        #[arg(long)]
        partition: Option<PathBuf>,
        #[arg(long)]
        critical: Option<PathBuf>,
        /// Margin between the inverter and regulator stage limits, pu.
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        start_minute: Option<usize>,
        #[arg(long)]
        minutes: Option<usize>,
        /// Directory for metrics.json, the action logs and the trace.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Summarize simulation runs into a comparison table and plot-ready CSVs.
    Report {
        /// Output directories of `simulate`.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write a synthetic one-day profile file for every profile a feeder references.
    SynthProfiles {
        #[command(flatten)]
        feeder: FeederArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Local,
    Coordinated,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}
