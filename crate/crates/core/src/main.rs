use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ssac::harness::{
    run_compare, run_experiment, Arch, CsiMode, ExperimentKind, ExperimentReport, ExperimentSpec,
};
use ssac::scene::SceneConfig;
use ssac::Error;

#[derive(Parser)]
#[command(version, about = "CRLB-constrained sensing-assisted beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte-Carlo experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// beampattern, rmse-vs-power, convergence, rate-vs-power,
        /// rate-vs-rf-chains, rate-vs-crlb-threshold or estimate-demo.
        #[arg(long)]
        experiment: String,
        /// Comma-separated sweep values; the experiment default if omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
    },
    /// Compare the proposed designs against MRT, decomposed hybrid and perfect-CSI baselines.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate VUE and target angles from simulated echoes.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Beampatterns of the proposed design and MRT over CRLB thresholds.
    Beampattern {
        #[command(flatten)]
        common: Common,
        /// Comma-separated CRLB thresholds in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the built-in desk scene if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed; the scenario's `rng_seed` if omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Output CSV; the JSON summary is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated architectures: digital, fc, pc.
    #[arg(long, value_delimiter = ',', default_value = "digital")]
    arch: Vec<String>,
    /// Channel knowledge for the design: sensed, exact-los or perfect.
    #[arg(long, default_value = "sensed")]
    csi: String,
}

fn spec_from(common: &Common, kind: ExperimentKind, grid: Option<Vec<f64>>) -> ssac::Result<ExperimentSpec> {
    let scene = match &common.config {
        Some(path) => SceneConfig::load(path)?,
        None => SceneConfig::desk(),
    };
    let mut spec = ExperimentSpec::new(scene, kind);
    spec.scenario = common.config.clone();
    if let Some(grid) = grid {
        spec.grid = grid;
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(out) = &common.out {
        spec.out = out.clone();
    }
    spec.trials = common.trials;
    spec.archs = common.arch.iter().map(|a| a.parse::<Arch>()).collect::<ssac::Result<_>>()?;
    spec.csi = common.csi.parse::<CsiMode>()?;
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> ssac::Result<(ExperimentSpec, ExperimentReport)> {
    match cli.command {
        Command::Run { common, experiment, grid } => {
            let spec = spec_from(&common, experiment.parse()?, grid)?;
            run_experiment(&spec).map(|r| (spec, r))
        }
        Command::Compare { common } => {
            let mut spec = spec_from(&common, ExperimentKind::RateVsPower, None)?;
            if common.out.is_none() {
                spec.out = PathBuf::from("results/compare.csv");
            }
            run_compare(&spec).map(|r| (spec, r))
        }
        Command::Estimate { common } => {
            let spec = spec_from(&common, ExperimentKind::EstimateDemo, None)?;
            run_experiment(&spec).map(|r| (spec, r))
        }
        Command::Beampattern { common, grid } => {
            let spec = spec_from(&common, ExperimentKind::Beampattern, grid)?;
            run_experiment(&spec).map(|r| (spec, r))
        }
    }
}

/// Exit code 2 for bad input, 3 for failures inside the pipeline.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Io(_)
        | Error::CoincidentNodes(_)
        | Error::DegenerateElevation(_)
        | Error::NegativeRadicand(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((spec, report)) => {
            println!(
                "wrote {} rows to {} ({} failed trials, {} failed groups)",
                report.rows.len(),
                spec.out.display(),
                report.failed_trials,
                report.failed_groups
            );
            for e in &report.errors {
                eprintln!("warning: {e}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
