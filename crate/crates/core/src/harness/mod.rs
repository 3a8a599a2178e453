//! Experiment runner: seeded Monte-Carlo trials, sweeps, baselines and
//! CSV/JSON output.

pub mod experiments;
pub mod stats;
pub mod trial;

pub use experiments::{
    compare_baselines, execute, run_compare, run_experiment, ExperimentKind, ExperimentReport,
    ExperimentSpec, ResultRow, CSV_HEADER,
};
pub use trial::{solve, Arch, CsiMode, Solution, SolverConfig, TrialContext};
