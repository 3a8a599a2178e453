//! Monte-Carlo sweeps and the baseline comparison table.
//!
//! Every trial returns one group of metric values per (architecture, sweep
//! point). Groups that fail are skipped and counted; trials are evaluated in
//! parallel and merged in trial order, so a fixed seed gives identical rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::stats::{mean, std_error};
use super::trial::{
    beam_gains, decomposed, evaluate, mrt, rescale, solve, Arch, CsiMode, SolverConfig,
    TrialContext,
};
use crate::error::{Error, Result};
use crate::estimator::{
    music_2d_refined, rd_mle, squared_angle_error, synth_echo, vue_null_filter, write_frame_csv,
    AngleGrid, EchoFrame, EstimatorConfig,
};
use crate::had::HadArchitecture;
use crate::linalg::CMatrix;
use crate::pdd::TRACE_HEADER;
use crate::scene::{dbm_to_watt, SceneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Beampattern,
    RmseVsPower,
    Convergence,
    RateVsPower,
    RateVsRfChains,
    RateVsCrlbThreshold,
    EstimateDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Beampattern,
        Self::RmseVsPower,
        Self::Convergence,
        Self::RateVsPower,
        Self::RateVsRfChains,
        Self::RateVsCrlbThreshold,
        Self::EstimateDemo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Beampattern => "beampattern",
            Self::RmseVsPower => "rmse-vs-power",
            Self::Convergence => "convergence",
            Self::RateVsPower => "rate-vs-power",
            Self::RateVsRfChains => "rate-vs-rf-chains",
            Self::RateVsCrlbThreshold => "rate-vs-crlb-threshold",
            Self::EstimateDemo => "estimate-demo",
        }
    }

    /// Name of the swept quantity.
    pub fn x_name(self) -> &'static str {
        match self {
            Self::RmseVsPower | Self::RateVsPower => "power_dbm",
            Self::RateVsRfChains => "num_rf",
            Self::Beampattern | Self::Convergence | Self::RateVsCrlbThreshold | Self::EstimateDemo => {
                "eta_db"
            }
        }
    }

    fn y_name(self) -> &'static str {
        match self {
            Self::Beampattern => "psi_deg",
            Self::Convergence => "outer",
            Self::EstimateDemo => "source",
            _ => "",
        }
    }

    pub fn default_grid(self, scene: &SceneConfig) -> Vec<f64> {
        match self {
            Self::Beampattern => vec![-30.0, -40.0, -50.0],
            // The top point sits 10 dB above the design power, well inside
            // the asymptotic regime of the estimator.
            Self::RmseVsPower => {
                let p = scene.power_budget_dbm;
                vec![p - 20.0, p - 10.0, p, p + 10.0]
            }
            Self::RateVsPower => vec![10.0, 20.0, 30.0],
            Self::RateVsRfChains => {
                let k = scene.num_vues();
                (k..=2 * k).filter(|n| scene.num_tx_antennas % n == 0).map(|n| n as f64).collect()
            }
            Self::RateVsCrlbThreshold => vec![-35.0, -40.0, -45.0, -50.0, -55.0],
            Self::Convergence | Self::EstimateDemo => vec![scene.crlb_threshold_db],
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.label()).collect();
            Error::Config(format!("unknown experiment `{s}` ({})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    /// Where the scene came from, echoed in the summary.
    pub scenario: Option<PathBuf>,
    pub scene: SceneConfig,
    pub kind: ExperimentKind,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// CSV path; the JSON summary goes next to it.
    pub out: PathBuf,
    pub seed: u64,
    pub archs: Vec<Arch>,
    pub csi: CsiMode,
    pub solver: SolverConfig,
}

impl ExperimentSpec {
    pub fn new(scene: SceneConfig, kind: ExperimentKind) -> Self {
        Self {
            scenario: None,
            grid: kind.default_grid(&scene),
            seed: scene.rng_seed,
            scene,
            kind,
            trials: 20,
            out: PathBuf::from(format!("results/{}.csv", kind.label())),
            archs: vec![Arch::Digital],
            csi: CsiMode::ExactLos,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.solver.pdd.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("sweep grid must be non-empty and finite".into()));
        }
        if self.archs.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        if self.kind == ExperimentKind::RateVsRfChains {
            for &n in &self.grid {
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return Err(Error::Config(format!("RF chain count {n} is not a positive integer")));
                }
            }
        }
        Ok(())
    }

    pub fn summary_path(&self) -> PathBuf {
        self.out.with_extension("json")
    }

    /// Path of an extra CSV next to the main one, e.g. `rates_trace.csv`.
    pub fn sidecar_path(&self, suffix: &str) -> PathBuf {
        let stem = self.out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        self.out.with_file_name(format!("{stem}_{suffix}.csv"))
    }
}

/// One aggregated metric at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub arch: String,
    pub x_name: String,
    pub x: f64,
    pub y_name: String,
    pub y: Option<f64>,
    pub metric: String,
    pub mean: f64,
    /// `None` when fewer than two trials contributed.
    pub stderr: Option<f64>,
    pub trials: usize,
    pub failed: usize,
}

pub const CSV_HEADER: &str = "experiment,arch,x_name,x,y_name,y,metric,mean,stderr,trials,failed";

impl ResultRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.arch,
            self.x_name,
            self.x,
            self.y_name,
            opt(self.y),
            self.metric,
            self.mean,
            opt(self.stderr),
            self.trials,
            self.failed
        )
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// How per-trial values combine into a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Agg {
    Mean,
    /// Root of the mean, for squared errors.
    RootMean,
}

#[derive(Debug, Clone)]
struct Value {
    y: Option<f64>,
    metric: String,
    value: f64,
    agg: Agg,
}

impl Value {
    fn mean(metric: impl Into<String>, value: f64) -> Self {
        Self { y: None, metric: metric.into(), value, agg: Agg::Mean }
    }

    fn root_mean(metric: impl Into<String>, value: f64) -> Self {
        Self { y: None, metric: metric.into(), value, agg: Agg::RootMean }
    }

    fn at(mut self, y: f64) -> Self {
        self.y = Some(y);
        self
    }
}

struct Group {
    arch: String,
    x: f64,
    values: Result<Vec<Value>>,
}

impl Group {
    fn new(arch: impl Into<String>, x: f64, values: Result<Vec<Value>>) -> Self {
        Self { arch: arch.into(), x, values }
    }
}

/// Rows plus failure bookkeeping of one run.
#[derive(Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    /// Trials that failed before producing any group.
    pub failed_trials: usize,
    /// Failed (trial, architecture, point) groups, trial failures excluded.
    pub failed_groups: usize,
    /// Distinct failure messages, at most a handful.
    pub errors: Vec<String>,
    /// Extra CSV files as (path, contents).
    pub sidecars: Vec<(PathBuf, String)>,
}

const MAX_ERRORS: usize = 8;

fn note_error(errors: &mut Vec<String>, first: &mut Option<Error>, e: Error) {
    let msg = e.to_string();
    if errors.len() < MAX_ERRORS && !errors.contains(&msg) {
        errors.push(msg);
    }
    if first.is_none() {
        *first = Some(e);
    }
}

fn aggregate(
    experiment: &str,
    x_name: &str,
    y_name: &str,
    outputs: Vec<Result<Vec<Group>>>,
) -> Result<ExperimentReport> {
    struct Acc {
        arch: String,
        x: f64,
        y: Option<f64>,
        metric: String,
        agg: Agg,
        values: Vec<f64>,
    }
    let mut accs: Vec<Acc> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let mut group_failures: Vec<(String, u64, usize)> = Vec::new();
    let (mut failed_trials, mut failed_groups) = (0, 0);
    let mut errors = Vec::new();
    let mut first = None;
    let mut any_success = false;

    for out in outputs {
        let groups = match out {
            Ok(g) => g,
            Err(e) => {
                failed_trials += 1;
                note_error(&mut errors, &mut first, e);
                continue;
            }
        };
        for g in groups {
            match g.values {
                Ok(values) => {
                    any_success = true;
                    for v in values {
                        let key = (g.arch.clone(), g.x.to_bits(), v.y.map(f64::to_bits), v.metric.clone());
                        let i = *index.entry(key).or_insert_with(|| {
                            accs.push(Acc {
                                arch: g.arch.clone(),
                                x: g.x,
                                y: v.y,
                                metric: v.metric.clone(),
                                agg: v.agg,
                                values: Vec::new(),
                            });
                            accs.len() - 1
                        });
                        accs[i].values.push(v.value);
                    }
                }
                Err(e) => {
                    failed_groups += 1;
                    match group_failures.iter_mut().find(|(a, x, _)| *a == g.arch && *x == g.x.to_bits()) {
                        Some(entry) => entry.2 += 1,
                        None => group_failures.push((g.arch.clone(), g.x.to_bits(), 1)),
                    }
                    note_error(&mut errors, &mut first, e);
                }
            }
        }
    }
    if !any_success {
        return Err(first.unwrap_or_else(|| Error::Config("experiment produced no groups".into())));
    }
    let rows = accs
        .into_iter()
        .map(|a| {
            let failed = failed_trials
                + group_failures
                    .iter()
                    .find(|(arch, x, _)| *arch == a.arch && *x == a.x.to_bits())
                    .map_or(0, |f| f.2);
            let (m, se) = match a.agg {
                Agg::Mean => (mean(&a.values), std_error(&a.values)),
                Agg::RootMean => {
                    let r = mean(&a.values).sqrt();
                    // Delta method on the square root.
                    (r, std_error(&a.values).map(|s| if r > 0.0 { s / (2.0 * r) } else { 0.0 }))
                }
            };
            ResultRow {
                experiment: experiment.to_string(),
                arch: a.arch,
                x_name: x_name.to_string(),
                x: a.x,
                y_name: y_name.to_string(),
                y: a.y,
                metric: a.metric,
                mean: m,
                stderr: se,
                trials: a.values.len(),
                failed,
            }
        })
        .collect();
    Ok(ExperimentReport { rows, failed_trials, failed_groups, errors, sidecars: Vec::new() })
}

fn run_trials<F>(trials: usize, f: F) -> Vec<Result<Vec<Group>>>
where
    F: Fn(usize) -> Result<Vec<Group>> + Sync + Send,
{
    (0..trials).into_par_iter().map(f).collect()
}

pub fn pdd_label(arch: Arch) -> String {
    format!("pdd-{}", arch.label())
}

fn with_power(scene: &SceneConfig, dbm: f64) -> SceneConfig {
    SceneConfig { power_budget_dbm: dbm, ..scene.clone() }
}

fn with_threshold(scene: &SceneConfig, db: f64) -> SceneConfig {
    SceneConfig { crlb_threshold_db: db, ..scene.clone() }
}

fn solution_values(ctx: &TrialContext, arch: Arch, solver: &SolverConfig) -> Result<Vec<Value>> {
    let s = solve(ctx, arch, solver)?;
    Ok(vec![
        Value::mean("rate", s.rate),
        Value::mean("design_rate", s.design_rate),
        Value::mean("crlb_trace", s.crlb_trace),
        Value::mean("converged", f64::from(u8::from(s.converged))),
    ])
}

/// Runs the sweep without touching the file system.
pub fn execute(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let kind = spec.kind;
    let outputs = match kind {
        ExperimentKind::Beampattern => run_trials(spec.trials, |t| beampattern_trial(spec, t)),
        ExperimentKind::RmseVsPower => run_trials(spec.trials, |t| rmse_trial(spec, t)),
        ExperimentKind::Convergence => run_trials(spec.trials, |t| convergence_trial(spec, t).map(|(g, _)| g)),
        ExperimentKind::RateVsPower => run_trials(spec.trials, |t| {
            sweep_trial(spec, t, |scene, x| Ok(with_power(scene, x)))
        }),
        ExperimentKind::RateVsCrlbThreshold => run_trials(spec.trials, |t| {
            sweep_trial(spec, t, |scene, x| Ok(with_threshold(scene, x)))
        }),
        ExperimentKind::RateVsRfChains => run_trials(spec.trials, |t| rf_chain_trial(spec, t)),
        ExperimentKind::EstimateDemo => run_trials(spec.trials, |t| estimate_trial(spec, t).map(|(g, _)| g)),
    };
    let mut report = aggregate(kind.label(), kind.x_name(), kind.y_name(), outputs)?;
    match kind {
        ExperimentKind::Convergence => {
            let traces: Vec<String> = (0..spec.trials)
                .into_par_iter()
                .map(|t| convergence_trial(spec, t).map(|(_, s)| s).unwrap_or_default())
                .collect();
            let mut csv = format!("trial,{TRACE_HEADER}\n");
            for s in traces {
                csv.push_str(&s);
            }
            report.sidecars.push((spec.sidecar_path("trace"), csv));
        }
        ExperimentKind::EstimateDemo => {
            if let Ok((_, Some(frame))) = estimate_trial(spec, 0) {
                let mut buf = Vec::new();
                write_frame_csv(&frame, &mut buf)?;
                let text = String::from_utf8(buf).expect("CSV output is ASCII");
                report.sidecars.push((spec.sidecar_path("frame"), text));
            }
        }
        _ => {}
    }
    Ok(report)
}

fn beampattern_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Group>> {
    let psis: Vec<f64> = (0..=360).map(|i| -90.0 + 0.5 * i as f64).collect();
    let pattern = |ctx: &TrialContext, w: &CMatrix| {
        let ula = ctx.scene.ula();
        let mut values = Vec::with_capacity(psis.len() * (w.ncols() + 1));
        for &deg in &psis {
            let gains = beam_gains(&ula, w, deg.to_radians());
            values.push(Value::mean("gain_total", gains.iter().sum()).at(deg));
            for (k, g) in gains.into_iter().enumerate() {
                values.push(Value::mean(format!("gain_beam{k}"), g).at(deg));
            }
        }
        values
    };
    let mut groups = Vec::new();
    for &eta in &spec.grid {
        let ctx = TrialContext::draw(&with_threshold(&spec.scene, eta), spec.seed, trial, spec.csi)?;
        for &arch in &spec.archs {
            let values = solve(&ctx, arch, &spec.solver).map(|s| pattern(&ctx, &s.w));
            groups.push(Group::new(pdd_label(arch), eta, values));
        }
        groups.push(Group::new("mrt", eta, mrt(&ctx).map(|w| pattern(&ctx, &w))));
    }
    Ok(groups)
}

/// Draws a frame for `w`, nulls the VUEs at their true arrival angles and
/// estimates the target with RD-MLE and 2D-MUSIC.
fn estimate_target(ctx: &mut TrialContext, w: &CMatrix) -> Result<(EchoFrame, (f64, f64), (f64, f64))> {
    let (ula, upa) = (ctx.scene.ula(), ctx.scene.upa());
    let frame = synth_echo(&ctx.scene, &ctx.geometry, w, &mut ctx.rng);
    let vue_angles: Vec<_> = ctx.geometry.vues.iter().map(|v| (v.theta, v.phi)).collect();
    let filter = vue_null_filter(&upa, &vue_angles)?;
    let rd = rd_mle(&frame, &filter, &ula, &upa, &EstimatorConfig::new(ctx.geometry.target.psi))?;
    let music = music_2d_refined(&frame, &upa, 1, Some(&filter), &AngleGrid::default(), 2)?[0];
    Ok((frame, rd, music))
}

fn rmse_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Group>> {
    let mut ctx = TrialContext::draw(&spec.scene, spec.seed, trial, spec.csi)?;
    let nominal = ctx.scene.power_watts();
    let mut groups = Vec::new();
    for &arch in &spec.archs {
        let sol = match solve(&ctx, arch, &spec.solver) {
            Ok(s) => s,
            Err(e) => {
                groups.push(Group::new(pdd_label(arch), spec.grid[0], Err(e)));
                continue;
            }
        };
        for &dbm in &spec.grid {
            let w = rescale(&sol.w, nominal, dbm_to_watt(dbm));
            let truth = ctx.target;
            let values = estimate_target(&mut ctx, &w).and_then(|(_, rd, music)| {
                Ok(vec![
                    Value::root_mean("rmse_rdmle", squared_angle_error(rd, &truth)),
                    Value::root_mean("rmse_music", squared_angle_error(music, &truth)),
                    Value::root_mean("sqrt_crlb", ctx.problem.crlb_trace(&w)?),
                ])
            });
            groups.push(Group::new(pdd_label(arch), dbm, values));
        }
    }
    Ok(groups)
}

fn convergence_trial(spec: &ExperimentSpec, trial: usize) -> Result<(Vec<Group>, String)> {
    let mut groups = Vec::new();
    let mut trace_csv = String::new();
    for &eta in &spec.grid {
        let ctx = TrialContext::draw(&with_threshold(&spec.scene, eta), spec.seed, trial, spec.csi)?;
        for &arch in &spec.archs {
            let values = solve(&ctx, arch, &spec.solver).map(|s| {
                for row in &s.trace {
                    let _ = writeln!(trace_csv, "{trial},{}", row.csv(&pdd_label(arch)));
                }
                // Finished runs hold their last iterate so every outer index
                // averages over all trials.
                let mut values = Vec::new();
                for outer in 0..spec.solver.pdd.max_outer {
                    let Some(r) = s.trace.get(outer).or(s.trace.last()) else { break };
                    let y = outer as f64 + 1.0;
                    values.push(Value::mean("rate", r.rate).at(y));
                    values.push(Value::mean("violation", r.violation).at(y));
                    values.push(Value::mean("al", r.al).at(y));
                    values.push(Value::mean("crlb_trace", r.crlb_trace).at(y));
                }
                values
            });
            groups.push(Group::new(pdd_label(arch), eta, values));
        }
    }
    Ok((groups, trace_csv))
}

fn sweep_trial<F>(spec: &ExperimentSpec, trial: usize, adjust: F) -> Result<Vec<Group>>
where
    F: Fn(&SceneConfig, f64) -> Result<SceneConfig>,
{
    let mut groups = Vec::new();
    for &x in &spec.grid {
        let ctx = TrialContext::draw(&adjust(&spec.scene, x)?, spec.seed, trial, spec.csi)?;
        for &arch in &spec.archs {
            groups.push(Group::new(pdd_label(arch), x, solution_values(&ctx, arch, &spec.solver)));
        }
    }
    Ok(groups)
}

fn rf_chain_trial(spec: &ExperimentSpec, trial: usize) -> Result<Vec<Group>> {
    let ctx = TrialContext::draw(&spec.scene, spec.seed, trial, spec.csi)?;
    let digital = solve(&ctx, Arch::Digital, &spec.solver);
    let mut groups = Vec::new();
    for &x in &spec.grid {
        let n_rf = x as usize;
        for &arch in &spec.archs {
            let had = match arch {
                Arch::Digital => {
                    let values = digital.as_ref().map_err(clone_error).map(|s| {
                        vec![
                            Value::mean("rate", s.rate),
                            Value::mean("design_rate", s.design_rate),
                            Value::mean("crlb_trace", s.crlb_trace),
                        ]
                    });
                    groups.push(Group::new(pdd_label(arch), x, values));
                    continue;
                }
                Arch::Fc => HadArchitecture::FullyConnected,
                Arch::Pc => HadArchitecture::PartiallyConnected,
            };
            let solver = SolverConfig { num_rf: Some(n_rf), ..spec.solver };
            groups.push(Group::new(pdd_label(arch), x, solution_values(&ctx, arch, &solver)));
            let dec = digital.as_ref().map_err(clone_error).and_then(|s| {
                let w = decomposed(&ctx, &s.w, had, n_rf, spec.solver.had.decomposition_rounds)?;
                let e = evaluate(&ctx, &w);
                Ok(vec![
                    Value::mean("rate", e.rate),
                    Value::mean("design_rate", e.design_rate),
                    Value::mean("crlb_trace", e.crlb_trace),
                ])
            });
            groups.push(Group::new(format!("decomposed-{}", arch.label()), x, dec));
        }
    }
    Ok(groups)
}

/// Errors are not `Clone`; a shared failure is re-raised by message.
fn clone_error(e: &Error) -> Error {
    Error::Config(format!("reference solve failed: {e}"))
}

fn estimate_trial(spec: &ExperimentSpec, trial: usize) -> Result<(Vec<Group>, Option<EchoFrame>)> {
    let eta = spec.grid[0];
    let mut ctx = TrialContext::draw(&with_threshold(&spec.scene, eta), spec.seed, trial, spec.csi)?;
    let upa = ctx.scene.upa();
    let k = ctx.geometry.vues.len();
    let mut groups = Vec::new();
    let mut first_frame = None;
    let mut precoders = Vec::new();
    for &arch in &spec.archs {
        precoders.push((pdd_label(arch), solve(&ctx, arch, &spec.solver).map(|s| s.w)));
    }
    precoders.push(("mrt".to_string(), mrt(&ctx)));
    for (label, w) in precoders {
        let values = w.and_then(|w| {
            let (frame, rd, _) = estimate_target(&mut ctx, &w)?;
            let vues = music_2d_refined(&frame, &upa, k, None, &AngleGrid::default(), 2)?;
            let mut values = Vec::new();
            let mut push = |src: usize, est: (f64, f64), truth: (f64, f64)| {
                let y = src as f64;
                values.push(Value::mean("theta_est_deg", est.0.to_degrees()).at(y));
                values.push(Value::mean("phi_est_deg", est.1.to_degrees()).at(y));
                values.push(Value::mean("theta_true_deg", truth.0.to_degrees()).at(y));
                values.push(Value::mean("phi_true_deg", truth.1.to_degrees()).at(y));
            };
            let mut peaks = vues;
            for (i, v) in ctx.geometry.vues.iter().enumerate() {
                let d = |p: &(f64, f64)| (p.0 - v.theta).hypot(p.1 - v.phi);
                if let Some(j) = (0..peaks.len()).min_by(|&a, &b| d(&peaks[a]).total_cmp(&d(&peaks[b]))) {
                    push(i, peaks.swap_remove(j), (v.theta, v.phi));
                }
            }
            push(k, rd, (ctx.target.theta, ctx.target.phi));
            if first_frame.is_none() {
                first_frame = Some(frame);
            }
            Ok(values)
        });
        groups.push(Group::new(label, eta, values));
    }
    Ok((groups, first_frame))
}

/// Rate and CRLB of every scheme on the same trials: the proposed digital
/// and hybrid designs, MRT, hybrid decompositions of the digital design,
/// and the digital design fed the true channels.
pub fn compare_baselines(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let eta_db = spec.scene.crlb_threshold_db;
    let eta = spec.scene.crlb_threshold();
    let n_rf = spec.solver.num_rf.unwrap_or(spec.scene.num_rf_chains);
    let outputs = run_trials(spec.trials, |trial| {
        let ctx = TrialContext::draw(&spec.scene, spec.seed, trial, spec.csi)?;
        let metrics = |rate: f64, design_rate: f64, crlb: f64| {
            vec![
                Value::mean("rate", rate),
                Value::mean("design_rate", design_rate),
                Value::mean("crlb_trace", crlb),
                Value::mean("crlb_ok", f64::from(u8::from(crlb <= eta * (1.0 + 1e-3)))),
            ]
        };
        let mut groups = Vec::new();
        let mut digital = None;
        for arch in Arch::ALL {
            let s = solve(&ctx, arch, &spec.solver);
            let values = s.as_ref().map(|s| metrics(s.rate, s.design_rate, s.crlb_trace)).map_err(clone_error);
            if arch == Arch::Digital {
                digital = Some(s.map(|s| s.w));
            }
            groups.push(Group::new(pdd_label(arch), eta_db, values));
        }
        groups.push(Group::new(
            "mrt",
            eta_db,
            mrt(&ctx).map(|w| {
                let e = evaluate(&ctx, &w);
                metrics(e.rate, e.design_rate, e.crlb_trace)
            }),
        ));
        let digital = digital.expect("digital is always solved");
        for (label, had) in [
            ("decomposed-fc", HadArchitecture::FullyConnected),
            ("decomposed-pc", HadArchitecture::PartiallyConnected),
        ] {
            let values = digital.as_ref().map_err(clone_error).and_then(|w| {
                let e = evaluate(&ctx, &decomposed(&ctx, w, had, n_rf, spec.solver.had.decomposition_rounds)?);
                Ok(metrics(e.rate, e.design_rate, e.crlb_trace))
            });
            groups.push(Group::new(label, eta_db, values));
        }
        let perfect = TrialContext::draw(&spec.scene, spec.seed, trial, CsiMode::Perfect)?;
        let values = solve(&perfect, Arch::Digital, &spec.solver).map(|s| metrics(s.rate, s.design_rate, s.crlb_trace));
        groups.push(Group::new("perfect-csi", eta_db, values));
        Ok(groups)
    });
    aggregate("compare", "eta_db", "", outputs)
}

/// Writes the CSV, its sidecars and the JSON summary.
pub fn write_outputs(
    spec: &ExperimentSpec,
    experiment: &str,
    report: &ExperimentReport,
    wall_time_s: f64,
) -> Result<()> {
    if let Some(dir) = spec.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&spec.out, rows_to_csv(&report.rows))?;
    for (path, text) in &report.sidecars {
        std::fs::write(path, text)?;
    }
    let pdd = &spec.solver.pdd;
    let summary = json!({
        "experiment": experiment,
        "version": concat!("v", env!("CARGO_PKG_VERSION")),
        "scenario": spec.scenario.as_deref().map(Path::display).map(|p| p.to_string()),
        "scene": spec.scene,
        "grid": spec.grid,
        "trials": spec.trials,
        "seed": spec.seed,
        "archs": spec.archs.iter().map(|a| a.label()).collect::<Vec<_>>(),
        "csi": spec.csi.label(),
        "solver": {
            "penalty_decay": pdd.penalty_decay,
            "initial_violation_threshold": pdd.initial_violation_threshold,
            "max_inner": pdd.max_inner,
            "max_outer": pdd.max_outer,
            "inner_tol": pdd.inner_tol,
            "violation_tol": pdd.violation_tol,
            "num_rf": spec.solver.num_rf.unwrap_or(spec.scene.num_rf_chains),
        },
        "rows": report.rows.len(),
        "failed_trials": report.failed_trials,
        "failed_groups": report.failed_groups,
        "errors": report.errors,
        "csv": spec.out.display().to_string(),
        "sidecars": report.sidecars.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>(),
        "wall_time_s": wall_time_s,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary is valid JSON");
    std::fs::write(spec.summary_path(), text + "\n")?;
    Ok(())
}

/// Executes the experiment and writes its outputs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let start = Instant::now();
    let report = execute(spec)?;
    write_outputs(spec, spec.kind.label(), &report, start.elapsed().as_secs_f64())?;
    Ok(report)
}

/// Runs the baseline comparison and writes its outputs.
pub fn run_compare(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let start = Instant::now();
    let report = compare_baselines(spec)?;
    write_outputs(spec, "compare", &report, start.elapsed().as_secs_f64())?;
    Ok(report)
}
