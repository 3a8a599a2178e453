//! One Monte-Carlo realization: jittered geometry, channels, the CSI handed
//! to the optimizer and the resulting design problem.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    mrt_beamformer, reconstruct_los_channel, synth_true_channel, ChannelSet, LosEstimate,
    SensingLinkParams,
};
use crate::error::{Error, Result};
use crate::estimator::{music_2d_refined, synth_echo, AngleGrid};
use crate::fim::TargetParams;
use crate::had::{decompose_baseline, optimize_had, HadArchitecture, HadConfig};
use crate::linalg::{C64, CMatrix};
use crate::pdd::{optimize_digital, PddConfig, PddProblem, TraceRow};
use crate::scene::{compute_geometry, GeometryLinks, SceneConfig};

/// Channel knowledge the optimizer designs with. Rates are always measured
/// on the true channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiMode {
    /// LoS channels rebuilt from the exact VUE positions.
    ExactLos,
    /// LoS channels rebuilt from 2D-MUSIC estimates of the VUE arrival angles.
    Sensed,
    /// The true channels including NLoS paths.
    Perfect,
}

impl CsiMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::ExactLos => "exact-los",
            Self::Sensed => "sensed",
            Self::Perfect => "perfect",
        }
    }
}

impl FromStr for CsiMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-los" => Ok(Self::ExactLos),
            "sensed" => Ok(Self::Sensed),
            "perfect" => Ok(Self::Perfect),
            _ => Err(Error::Config(format!("unknown CSI mode `{s}` (exact-los, sensed, perfect)"))),
        }
    }
}

/// Precoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Digital,
    Fc,
    Pc,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Digital, Arch::Fc, Arch::Pc];

    pub fn label(self) -> &'static str {
        match self {
            Self::Digital => "digital",
            Self::Fc => "fc",
            Self::Pc => "pc",
        }
    }

    fn hybrid(self) -> Option<HadArchitecture> {
        match self {
            Self::Digital => None,
            Self::Fc => Some(HadArchitecture::FullyConnected),
            Self::Pc => Some(HadArchitecture::PartiallyConnected),
        }
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "digital" => Ok(Self::Digital),
            "fc" => Ok(Self::Fc),
            "pc" => Ok(Self::Pc),
            _ => Err(Error::Config(format!("unknown architecture `{s}` (digital, fc, pc)"))),
        }
    }
}

/// RNG for `trial` under `seed`: one ChaCha stream per trial.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct TrialContext {
    pub trial: usize,
    pub scene: SceneConfig,
    pub geometry: GeometryLinks,
    pub channels: ChannelSet,
    /// Channels the optimizer sees.
    pub csi: CMatrix,
    pub vue_psi: Vec<f64>,
    pub target: SensingLinkParams,
    pub problem: PddProblem,
    /// Continues the trial's stream for echo draws.
    pub rng: ChaCha8Rng,
}

impl TrialContext {
    pub fn draw(scene: &SceneConfig, seed: u64, trial: usize, csi: CsiMode) -> Result<Self> {
        scene.validate()?;
        let nominal = compute_geometry(scene)?;
        let mut rng = trial_rng(seed, trial);
        let scene = scene.jittered(&mut rng);
        let geometry = compute_geometry(&scene)?;
        let channels = synth_true_channel(&scene, &geometry, &mut rng);
        let phase = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
        let target = SensingLinkParams::from_link(&scene, &geometry.target, scene.rcs_target_dbsm, phase);
        let (csi_matrix, vue_psi): (CMatrix, Vec<f64>) = match csi {
            CsiMode::ExactLos => {
                let est: Vec<_> = geometry.vues.iter().map(LosEstimate::exact).collect();
                (reconstruct_los_channel(&scene, &est), est.iter().map(|e| e.psi).collect())
            }
            CsiMode::Perfect => {
                (channels.true_channels.clone(), geometry.vues.iter().map(|v| v.psi).collect())
            }
            CsiMode::Sensed => {
                let est = sense_vues(&nominal, &scene, &geometry, &mut rng)?;
                (reconstruct_los_channel(&scene, &est), est.iter().map(|e| e.psi).collect())
            }
        };
        let problem = PddProblem::new(&scene, csi_matrix.clone(), vue_psi.clone(), &target_params(&target));
        Ok(Self { trial, scene, geometry, channels, csi: csi_matrix, vue_psi, target, problem, rng })
    }

    /// Sum rate of `w` on the true channels.
    pub fn true_rate(&self, w: &CMatrix) -> f64 {
        crate::fp::sum_rate(&self.channels.true_channels, w, self.scene.noise_comm_watts())
    }
}

pub fn target_params(link: &SensingLinkParams) -> TargetParams {
    TargetParams { theta: link.theta, phi: link.phi, psi: link.psi, alpha: link.alpha }
}

/// Localizes every VUE from one echo frame. The BS beams at the departure
/// angles of the nominal (unjittered) scene, 2D-MUSIC finds the strongest
/// arrivals, each VUE takes the peak closest to its nominal arrival and its
/// position follows from the known height difference.
fn sense_vues(
    nominal: &GeometryLinks,
    scene: &SceneConfig,
    geometry: &GeometryLinks,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LosEstimate>> {
    let (ula, upa) = (scene.ula(), scene.upa());
    let k = nominal.vues.len();
    let mut beams = CMatrix::zeros(ula.num_elements, k);
    for (col, v) in nominal.vues.iter().enumerate() {
        beams.set_column(col, &ula.steering(v.psi));
    }
    let w = mrt_beamformer(&beams, scene.power_watts())?;
    let frame = synth_echo(scene, geometry, &w, rng);
    let mut peaks = music_2d_refined(&frame, &upa, k, None, &AngleGrid::default(), 2)?;
    let mut out = Vec::with_capacity(k);
    for (v, pos) in nominal.vues.iter().zip(&scene.vue_positions) {
        let dist = |p: &(f64, f64)| (p.0 - v.theta).hypot(p.1 - v.phi);
        let idx = (0..peaks.len())
            .min_by(|&a, &b| dist(&peaks[a]).total_cmp(&dist(&peaks[b])))
            .ok_or(Error::CovarianceRankDeficient(k))?;
        let (theta, phi) = peaks.swap_remove(idx);
        out.push(LosEstimate::from_aoa(scene, theta, phi, scene.height_difference(pos))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolverConfig {
    pub pdd: PddConfig,
    pub had: HadConfig,
    /// RF chains for the hybrid architectures; the scene value if `None`.
    pub num_rf: Option<usize>,
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub arch: Arch,
    pub w: CMatrix,
    /// Rate on the true channels.
    pub rate: f64,
    /// Rate on the channels used for the design.
    pub design_rate: f64,
    pub crlb_trace: f64,
    pub converged: bool,
    pub violation: f64,
    pub trace: Vec<TraceRow>,
    pub worst_al_drop: f64,
}

pub fn solve(ctx: &TrialContext, arch: Arch, cfg: &SolverConfig) -> Result<Solution> {
    let ula = ctx.scene.ula();
    let p = &ctx.problem;
    let (w, converged, violation, trace, drop) = match arch.hybrid() {
        None => {
            let o = optimize_digital(p, &ula, &cfg.pdd)?;
            (o.w, o.converged, o.violation, o.trace, o.worst_al_drop)
        }
        Some(h) => {
            let n_rf = cfg.num_rf.unwrap_or(ctx.scene.num_rf_chains);
            let o = optimize_had(p, &ula, n_rf, h, &cfg.pdd, &cfg.had)?;
            (o.w, o.converged, o.violation, o.trace, o.worst_al_drop)
        }
    };
    Ok(Solution {
        arch,
        rate: ctx.true_rate(&w),
        design_rate: p.sum_rate(&w),
        crlb_trace: p.crlb_trace(&w).unwrap_or(f64::INFINITY),
        w,
        converged,
        violation,
        trace,
        worst_al_drop: drop,
    })
}

/// Rate and CRLB of a fixed precoder in this trial.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub rate: f64,
    pub design_rate: f64,
    pub crlb_trace: f64,
}

pub fn evaluate(ctx: &TrialContext, w: &CMatrix) -> Evaluation {
    Evaluation {
        rate: ctx.true_rate(w),
        design_rate: ctx.problem.sum_rate(w),
        crlb_trace: ctx.problem.crlb_trace(w).unwrap_or(f64::INFINITY),
    }
}

/// MRT designed on the optimizer's CSI.
pub fn mrt(ctx: &TrialContext) -> Result<CMatrix> {
    mrt_beamformer(&ctx.csi, ctx.scene.power_watts())
}

/// Hybrid approximation of a digital precoder by alternating least squares.
pub fn decomposed(
    ctx: &TrialContext,
    w: &CMatrix,
    arch: HadArchitecture,
    num_rf: usize,
    rounds: usize,
) -> Result<CMatrix> {
    Ok(decompose_baseline(w, num_rf, arch, ctx.scene.power_watts(), rounds)?.effective())
}

/// `|b(psi)^H w_k|^2` for every column of `w`.
pub fn beam_gains(ula: &crate::arrays::Ula<f64>, w: &CMatrix, psi: f64) -> Vec<f64> {
    let b = ula.steering(psi);
    (0..w.ncols()).map(|k| b.dotc(&w.column(k)).norm_sqr()).collect()
}

/// Scales a precoder designed for `from_watts` to `to_watts`.
pub fn rescale(w: &CMatrix, from_watts: f64, to_watts: f64) -> CMatrix {
    w * C64::from((to_watts / from_watts).sqrt())
}
